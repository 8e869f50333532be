"""Stage 2: per-leaf instruction synthesis, answers, and the fixed-temperature
baseline generator.

Each leaf subspace contributes a fixed number of records, prompted with the
leaf's composed description. Dimensions whose value was deferred at build
time are instantiated per record: drawn uniformly from the stored candidate
pool when the pool is an exhaustive enumeration, otherwise requested from the
provider. Draws come from a per-leaf RNG stream derived from (seed, leaf id),
so adding or reordering leaves never shifts another leaf's records.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import GatewayError, ProviderExhaustedError, TreeIncompleteError
from .gateway import Gateway
from .templates import TemplateSet
from .tree import NodeKind, PartitionConfig, SpaceTree, fingerprint

logger = logging.getLogger(__name__)

SAMPLES_TEMPERATURE = 1.0
ANSWER_TEMPERATURE = 0.2
BASELINE_TEMPERATURE = 0.7  # the standard fixed-temperature baseline setting
BASELINE_LEAF_ID = "baseline"
BASELINE_BATCH = 10


@dataclass(frozen=True)
class SampleRecord:
    """One synthesized instruction with its full subspace provenance."""

    id: str
    leaf_id: str
    instruction: str
    answer: str | None
    attribute_path: tuple[tuple[str, str], ...]  # (dimension, concrete value)
    model: str
    temperature: float
    batch_index: int
    created_at: float = 0.0  # in-memory only; artifacts must stay byte-stable

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "leaf_id": self.leaf_id,
            "instruction": self.instruction,
            "answer": self.answer,
            "attribute_path": [
                {"dimension": d, "value": v} for d, v in self.attribute_path
            ],
            "meta": {
                "model": self.model,
                "temperature": self.temperature,
                "batch_index": self.batch_index,
            },
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SampleRecord":
        return cls(
            id=obj["id"],
            leaf_id=obj["leaf_id"],
            instruction=obj["instruction"],
            answer=obj.get("answer"),
            attribute_path=tuple(
                (step["dimension"], step["value"]) for step in obj["attribute_path"]
            ),
            model=obj["meta"]["model"],
            temperature=obj["meta"]["temperature"],
            batch_index=obj["meta"]["batch_index"],
        )


@dataclass
class Dataset:
    """An ordered record collection plus stage flags and provenance."""

    records: list[SampleRecord] = field(default_factory=list)
    tree_fingerprint: str | None = None
    deduped: bool = False
    answered: bool = False
    baseline: bool = False
    partial: bool = False
    failures: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def validate_ids(self) -> None:
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids are not unique")


# -- dataset files -------------------------------------------------------------


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Newline-delimited JSON records plus a sidecar manifest with the stage
    flags and the fingerprint of the tree that produced them."""
    path = Path(path)
    dataset.validate_ids()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in dataset.records:
            fh.write(json.dumps(record.to_json_dict(), ensure_ascii=False) + "\n")
    os.replace(tmp, path)

    sidecar = {
        "record_count": len(dataset.records),
        "tree_fingerprint": dataset.tree_fingerprint,
        "deduped": dataset.deduped,
        "answered": dataset.answered,
        "baseline": dataset.baseline,
        "partial": dataset.partial,
        "failures": list(dataset.failures),
    }
    tmp_manifest = sidecar_path(path).with_suffix(".tmp")
    with open(tmp_manifest, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(sidecar, ensure_ascii=False, indent=2) + "\n")
    os.replace(tmp_manifest, sidecar_path(path))


def sidecar_path(dataset_path: str | Path) -> Path:
    path = Path(dataset_path)
    return path.with_name(path.name + ".manifest.json")


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(SampleRecord.from_json_dict(json.loads(line)))
    dataset = Dataset(records=records)
    sidecar = sidecar_path(path)
    if sidecar.is_file():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        dataset.tree_fingerprint = meta.get("tree_fingerprint")
        dataset.deduped = meta.get("deduped", False)
        dataset.answered = meta.get("answered", False)
        dataset.baseline = meta.get("baseline", False)
        dataset.partial = meta.get("partial", False)
        dataset.failures = list(meta.get("failures", []))
    return dataset


def dataset_fingerprint(path: str | Path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return f"sha256:{digest}"


# -- synthesis -----------------------------------------------------------------


def _leaf_rng(seed: int, leaf_id: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}\x00{leaf_id}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _request_samples(
    gateway: Gateway,
    templates: TemplateSet,
    description: str,
    count: int,
    *,
    temperature: float,
    purpose: str,
    request_id: str,
) -> list[str]:
    """One batched list request, with a single halved-batch fallback when the
    reply was truncated or short."""

    def ask(n: int, rid: str) -> list[str]:
        prompt = (
            templates.baseline(description, n)
            if purpose == "baseline"
            else templates.samples(description, n)
        )
        payload = gateway.generate_structured(
            prompt, "sample-list",
            temperature=temperature, purpose=purpose, request_id=rid,
        )
        return payload["samples"]

    try:
        texts = ask(count, request_id)
        if len(texts) >= count:
            return texts[:count]
        logger.debug("%s returned %d/%d samples; splitting", request_id, len(texts), count)
    except GatewayError as exc:
        if count < 2:
            raise
        logger.debug("%s failed (%s); splitting the batch once", request_id, exc)

    if count < 2:
        raise ProviderExhaustedError(f"{request_id}: could not obtain {count} samples")
    first = count // 2
    texts = ask(first, f"{request_id}/a") + ask(count - first, f"{request_id}/b")
    if len(texts) < count:
        raise ProviderExhaustedError(
            f"{request_id}: got {len(texts)} of {count} samples after split retry"
        )
    return texts[:count]


def _resolve_path(
    tree: SpaceTree,
    leaf_id: str,
    rng: random.Random,
    gateway: Gateway,
    templates: TemplateSet,
) -> tuple[tuple[tuple[str, str], ...], dict[str, str]]:
    """Concrete (dimension, value) pairs for one record.

    Bounded steps keep their inherited value. A deferred step under an
    unbounded node draws from the stored pool when the enumeration was
    exhaustive (it merely overflowed the child budget), and asks the provider
    for a fresh value when the dimension was declared open-ended.
    """
    steps = []
    resolved: dict[str, str] = {}
    node_id = leaf_id
    chain = []
    while node_id is not None:
        chain.append(node_id)
        node_id = tree.parent_id(node_id)
    chain.reverse()  # root .. leaf

    for parent, child in zip(chain, chain[1:]):
        step = tree.node(child).inherited_attribute
        if step.value is not None:
            steps.append((step.dimension, step.value.label))
            continue
        dim = tree.node(parent).dimension
        if dim.unbounded:
            nonce = rng.getrandbits(32)
            description = tree.node_description(leaf_id, resolved=resolved)
            payload = gateway.generate_structured(
                templates.value_draw(description, dim.name, nonce),
                "value-list",
                temperature=SAMPLES_TEMPERATURE,
                purpose="value-draw",
                request_id=f"draw:{leaf_id}:{nonce}",
            )
            label = payload["values"][0]["label"]
        else:
            label = rng.choice([v.label for v in dim.full_values])
        steps.append((dim.name, label))
        resolved[dim.name] = label
    return tuple(steps), resolved


def synthesize_leaf(
    tree: SpaceTree,
    leaf_id: str,
    count: int,
    gateway: Gateway,
    templates: TemplateSet,
    seed: int,
    *,
    temperature: float = SAMPLES_TEMPERATURE,
) -> list[SampleRecord]:
    """Generate ``count`` records distributed within one leaf subspace."""
    if not tree.complete:
        raise TreeIncompleteError("synthesis requires a completed tree")
    node = tree.node(leaf_id)
    if node.kind is not NodeKind.LEAF:
        raise ValueError(f"node {leaf_id!r} is not a leaf")
    if count < 1:
        raise ValueError("count must be >= 1")

    rng = _leaf_rng(seed, leaf_id)
    paths = [
        _resolve_path(tree, leaf_id, rng, gateway, templates) for _ in range(count)
    ]

    # Batch records that share the same drawn values into one provider call.
    groups: dict[tuple[tuple[str, str], ...], list[int]] = {}
    for index, (path, _) in enumerate(paths):
        groups.setdefault(path, []).append(index)

    texts: dict[int, str] = {}
    for group_no, (path, indices) in enumerate(groups.items()):
        resolved = paths[indices[0]][1]
        description = tree.node_description(leaf_id, resolved=resolved)
        got = _request_samples(
            gateway, templates, description, len(indices),
            temperature=temperature, purpose="samples",
            request_id=f"samples:{leaf_id}/{group_no}",
        )
        for index, text in zip(indices, got):
            texts[index] = text

    now = time.time()
    return [
        SampleRecord(
            id=f"{leaf_id}:{index:04d}",
            leaf_id=leaf_id,
            instruction=texts[index],
            answer=None,
            attribute_path=paths[index][0],
            model=gateway.generate_model,
            temperature=temperature,
            batch_index=index,
            created_at=now,
        )
        for index in range(count)
    ]


def synthesize_all(
    tree: SpaceTree,
    config: PartitionConfig,
    gateway: Gateway,
    templates: TemplateSet,
    *,
    count_per_leaf: int | None = None,
    temperature: float = SAMPLES_TEMPERATURE,
) -> Dataset:
    """Union of per-leaf synthesis over every leaf, in leaf order.

    Leaves run concurrently; output order is (leaf order, batch index) no
    matter which leaf finishes first. A leaf whose batch ultimately fails is
    skipped and listed in ``failures`` with the dataset flagged partial.
    """
    if not tree.complete:
        raise TreeIncompleteError("synthesis requires a completed tree")
    count = count_per_leaf or config.samples_per_leaf
    leaves = tree.leaf_nodes()
    seed = config.rng_seed

    def one(leaf_id: str):
        try:
            return leaf_id, synthesize_leaf(
                tree, leaf_id, count, gateway, templates, seed, temperature=temperature
            ), None
        except (GatewayError, ProviderExhaustedError) as exc:
            return leaf_id, [], f"{leaf_id}: {type(exc).__name__}: {exc}"

    if config.max_inflight_requests == 1 or len(leaves) == 1:
        results = [one(leaf_id) for leaf_id in leaves]
    else:
        workers = min(len(leaves), config.max_inflight_requests)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, leaves))

    dataset = Dataset(tree_fingerprint=fingerprint(tree))
    for leaf_id, records, failure in results:
        if failure is not None:
            dataset.failures.append(failure)
            logger.warning("leaf synthesis failed: %s", failure)
        dataset.records.extend(records)
    dataset.partial = bool(dataset.failures)
    dataset.validate_ids()
    return dataset


def generate_answers(
    dataset: Dataset,
    gateway: Gateway,
    templates: TemplateSet,
    *,
    temperature: float = ANSWER_TEMPERATURE,
    max_inflight: int = 8,
) -> Dataset:
    """Pair every instruction with a provider answer.

    Records that already carry answers are skipped, so a rerun after partial
    failure only fills the gaps. Per-record failures leave the answer absent
    and are listed in ``failures``.
    """
    pending = [r for r in dataset.records if r.answer is None]

    def one(record: SampleRecord):
        try:
            payload = gateway.generate_structured(
                templates.answer(record.instruction), "answer",
                temperature=temperature, purpose="answer",
                request_id=f"answer:{record.id}",
            )
            return record.id, payload["answer"], None
        except GatewayError as exc:
            return record.id, None, f"{record.id}: {type(exc).__name__}: {exc}"

    if not pending:
        results = []
    elif max_inflight == 1 or len(pending) == 1:
        results = [one(r) for r in pending]
    else:
        with ThreadPoolExecutor(max_workers=min(len(pending), max_inflight)) as pool:
            results = list(pool.map(one, pending))

    answers = {rid: text for rid, text, _ in results if text is not None}
    failures = [msg for _, _, msg in results if msg is not None]
    records = [
        replace(r, answer=answers.get(r.id, r.answer)) for r in dataset.records
    ]
    return replace(
        dataset,
        records=records,
        answered=True,
        failures=dataset.failures + failures,
    )


def temperature_baseline(
    description: str,
    count: int,
    temperature: float,
    gateway: Gateway,
    templates: TemplateSet,
    seed: int,
    *,
    batch_size: int = BASELINE_BATCH,
) -> Dataset:
    """Fixed-temperature generation straight from the task description: the
    no-tree baseline the partitioned pipeline is compared against."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")

    texts: list[str] = []
    batch_no = 0
    while len(texts) < count:
        need = min(batch_size, count - len(texts))
        got = _request_samples(
            gateway, templates, description, need,
            temperature=temperature, purpose="baseline",
            request_id=f"baseline:{seed}/{batch_no}",
        )
        texts.extend(got)
        batch_no += 1

    now = time.time()
    records = [
        SampleRecord(
            id=f"{BASELINE_LEAF_ID}:{i:04d}",
            leaf_id=BASELINE_LEAF_ID,
            instruction=text,
            answer=None,
            attribute_path=(),
            model=gateway.generate_model,
            temperature=temperature,
            batch_index=i,
            created_at=now,
        )
        for i, text in enumerate(texts[:count])
    ]
    return Dataset(records=records, baseline=True)


def subsample(dataset: Dataset, size: int, *, mode: str = "uniform", seed: int = 0) -> Dataset:
    """Cut a dataset down to ``size`` records, keeping the original order.

    ``uniform`` draws over all records; ``per-leaf`` allocates the budget
    evenly across leaves first (stratified). A budget at or above the corpus
    size returns the dataset unchanged.
    """
    if size >= len(dataset.records):
        return dataset
    if mode not in ("uniform", "per-leaf"):
        raise ValueError(f"unknown subsample mode {mode!r}")
    rng = random.Random(seed)
    if mode == "uniform":
        chosen = sorted(rng.sample(range(len(dataset.records)), size))
        records = [dataset.records[i] for i in chosen]
    else:
        by_leaf: dict[str, list[int]] = {}
        for i, record in enumerate(dataset.records):
            by_leaf.setdefault(record.leaf_id, []).append(i)
        leaves = list(by_leaf)
        quota = {leaf: size // len(leaves) for leaf in leaves}
        for leaf in leaves[: size % len(leaves)]:
            quota[leaf] += 1
        chosen = []
        for leaf in leaves:
            indices = by_leaf[leaf]
            take = min(quota[leaf], len(indices))
            chosen.extend(rng.sample(indices, take))
        chosen.sort()
        records = [dataset.records[i] for i in chosen]
    return replace(dataset, records=records)


__all__ = [
    "SampleRecord",
    "Dataset",
    "write_dataset",
    "load_dataset",
    "sidecar_path",
    "dataset_fingerprint",
    "synthesize_leaf",
    "synthesize_all",
    "generate_answers",
    "temperature_baseline",
    "subsample",
    "SAMPLES_TEMPERATURE",
    "ANSWER_TEMPERATURE",
    "BASELINE_TEMPERATURE",
    "BASELINE_LEAF_ID",
]

"""Stage 1: drive per-node criteria determination and coverage, build the tree.

For every node below the depth limit the build makes three provider calls:
one for pivot samples, one to name the dimension that best distinguishes
them, and one to complete that dimension's attribute values. The resulting
split is attached to the tree; nodes at the depth limit become leaves. The
queue is breadth-first and the whole tree is checkpointed atomically after
every attach, so a killed build resumes to the same result.

Siblings at one depth are expanded concurrently (their provider calls are
independent); attaches are applied in queue order on the coordinating thread,
so concurrency never changes the resulting tree.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

from .errors import (
    ConfigMismatchError,
    CoverageRegressionError,
    DimensionReuseError,
    GatewayError,
    InsufficientSamplesError,
    InvalidDimensionError,
    NonExclusivePartitionError,
    PartitionError,
)
from .gateway import Gateway
from .templates import TemplateSet
from .tree import (
    AttributeValue,
    DimensionSpec,
    NodeKind,
    PartitionConfig,
    SpaceTree,
    normalize_label,
    save,
)
from . import tree as tree_io

logger = logging.getLogger(__name__)

PIVOT_TEMPERATURE = 1.0       # diversity-seeking
DIMENSION_TEMPERATURE = 0.2   # stability-seeking
COVERAGE_TEMPERATURE = 0.2


@dataclass
class PivotSet:
    """Pivot samples for one node, plus their per-value assignment."""

    node_id: str
    samples: list[str]
    assignment: list[str] | None = None


@dataclass
class ExpansionOutcome:
    """What happened to one dequeued node."""

    node_id: str
    result: str  # "split" | "leaf" | "terminalized"
    dimension: DimensionSpec | None = None
    reason: str | None = None
    attempts: int = 0
    request_ids: list[str] = field(default_factory=list)


@dataclass
class BuildReport:
    outcomes: list[ExpansionOutcome] = field(default_factory=list)

    @property
    def failures(self) -> list[ExpansionOutcome]:
        return [o for o in self.outcomes if o.result == "terminalized"]

    def to_json(self) -> str:
        doc = {
            "nodes": [
                {
                    "node_id": o.node_id,
                    "result": o.result,
                    "dimension": o.dimension.name if o.dimension else None,
                    "reason": o.reason,
                    "attempts": o.attempts,
                    "request_ids": o.request_ids,
                }
                for o in sorted(self.outcomes, key=lambda o: o.node_id)
            ],
            "failure_count": len(self.failures),
        }
        return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"

    def write(self, path: str) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        os.replace(tmp, path)


def generate_pivot_samples(
    description: str,
    count: int,
    gateway: Gateway,
    templates: TemplateSet,
    *,
    node_id: str = "",
    temperature: float = PIVOT_TEMPERATURE,
) -> PivotSet:
    """Ask for ``count`` distinct scouting samples from one subspace.

    Duplicates (after label normalization) trigger a single regeneration call
    for the missing slots; coming up short after that is a hard failure.
    """
    if not description.strip():
        raise ValueError("pivot generation needs a non-empty description")
    prompt = templates.pivot(description, count)
    payload = gateway.generate_structured(
        prompt, "pivot-list",
        temperature=temperature, purpose="pivot", request_id=f"pivot:{node_id}",
    )
    samples = _dedupe(payload["samples"])

    if len(samples) < count:
        missing = count - len(samples)
        retry_prompt = prompt + (
            "\n\nThe following samples are already taken; produce "
            f"exactly {missing} new samples that repeat none of them:\n"
            + "\n".join(f"- {s}" for s in samples)
        )
        payload = gateway.generate_structured(
            retry_prompt, "pivot-list",
            temperature=temperature, purpose="pivot", request_id=f"pivot:{node_id}+more",
        )
        samples = _dedupe(samples + payload["samples"])

    if len(samples) < count:
        raise InsufficientSamplesError(
            f"needed {count} distinct pivot samples, got {len(samples)}"
        )
    return PivotSet(node_id=node_id, samples=samples[:count])


def _dedupe(texts: list[str]) -> list[str]:
    seen: set[str] = set()
    kept = []
    for text in texts:
        key = normalize_label(text)
        if key and key not in seen:
            seen.add(key)
            kept.append(text.strip())
    return kept


def determine_dimension(
    description: str,
    pivots: PivotSet,
    gateway: Gateway,
    templates: TemplateSet,
    *,
    forbidden: list[str] | None = None,
    retry_limit: int = 2,
    temperature: float = DIMENSION_TEMPERATURE,
) -> DimensionSpec:
    """Pick the one dimension that best distinguishes the pivots.

    The reply must classify every pivot under exactly one of mutually
    exclusive values, and must not reuse a dimension already fixed on the
    node's path; violations are fed back for another try up to
    ``retry_limit`` reprompts.
    """
    banned = {normalize_label(n) for n in (forbidden or [])}
    prompt = templates.dimension(description, pivots.samples, sorted(forbidden or []))
    feedback = ""
    failure: PartitionError | None = None
    for attempt in range(retry_limit + 1):
        payload = gateway.generate_structured(
            prompt + feedback, "dimension-spec",
            temperature=temperature, purpose="dimension",
            request_id=f"dimension:{pivots.node_id}#{attempt + 1}",
        )
        try:
            spec = _accept_dimension(payload, len(pivots.samples), banned)
        except (NonExclusivePartitionError, DimensionReuseError) as exc:
            failure = exc
            feedback = (
                f"\n\nYour previous reply was rejected: {exc}. "
                "Fix this and reply again in the same JSON format."
            )
            logger.debug("dimension attempt %d rejected: %s", attempt + 1, exc)
            continue
        pivots.assignment = payload["assignment"]
        return spec
    raise failure  # type: ignore[misc]


def _accept_dimension(payload: dict, pivot_count: int, banned: set[str]) -> DimensionSpec:
    name = payload["dimension"]
    if normalize_label(name) in banned:
        raise DimensionReuseError(
            f"dimension {name!r} is already used on this node's path"
        )
    values = [AttributeValue(v["label"], v["description"]) for v in payload["values"]]
    labels = [normalize_label(v.label) for v in values]
    if len(set(labels)) != len(labels):
        raise NonExclusivePartitionError(
            "attribute values are not mutually exclusive: duplicate labels "
            f"{sorted({l for l in labels if labels.count(l) > 1})}"
        )
    assignment = payload["assignment"]
    if len(assignment) != pivot_count:
        raise NonExclusivePartitionError(
            f"assignment covers {len(assignment)} samples, expected {pivot_count}"
        )
    label_set = set(labels)
    stray = [a for a in assignment if normalize_label(a) not in label_set]
    if stray:
        raise NonExclusivePartitionError(
            f"assignment uses labels outside the value set: {sorted(set(stray))}"
        )
    observed = tuple(values)
    return DimensionSpec(
        name=name,
        rationale=payload.get("rationale", ""),
        observed_values=observed,
        full_values=observed,
        unbounded=False,
    )


def complement_attributes(
    description: str,
    spec: DimensionSpec,
    gateway: Gateway,
    templates: TemplateSet,
    *,
    node_id: str = "",
    temperature: float = COVERAGE_TEMPERATURE,
) -> DimensionSpec:
    """Expand observed values into the full candidate set for the dimension.

    Dropping an observed value is fed back once; a second regression fails
    the call. Duplicate labels in the reply are collapsed to their first
    occurrence, and emission order is kept verbatim because it freezes child
    ordering at attach time.
    """
    prompt = templates.coverage(
        description, spec.name, [v.label for v in spec.observed_values]
    )
    feedback = ""
    for attempt in range(2):
        payload = gateway.generate_structured(
            prompt + feedback, "value-list",
            temperature=temperature, purpose="coverage",
            request_id=f"coverage:{node_id}#{attempt + 1}",
        )
        full: list[AttributeValue] = []
        seen: set[str] = set()
        for entry in payload["values"]:
            key = normalize_label(entry["label"])
            if key not in seen:
                seen.add(key)
                full.append(AttributeValue(entry["label"], entry["description"]))
        missing = [
            v.label for v in spec.observed_values if normalize_label(v.label) not in seen
        ]
        if not missing:
            return replace(
                spec, full_values=tuple(full), unbounded=payload["unbounded"]
            )
        feedback = (
            "\n\nYour previous reply dropped observed values "
            f"{missing}; every observed value must appear in the full list. "
            "Reply again in the same JSON format."
        )
    raise CoverageRegressionError(
        f"coverage for {spec.name!r} kept dropping observed values: {missing}"
    )


def expand_node(
    tree: SpaceTree,
    node_id: str,
    gateway: Gateway,
    templates: TemplateSet,
) -> ExpansionOutcome:
    """Run the full three-call expansion for one node, with node-level retry.

    Any failure (provider, schema, degenerate split) voids the attempt and the
    node is re-expanded from scratch up to ``retry_limit`` extra times; after
    that the outcome is ``terminalized`` and the build carries on without it.
    """
    config = tree.config
    description = tree.node_description(node_id)
    forbidden = [step.dimension for step in tree.node_path(node_id)]
    last_error: Exception | None = None
    for attempt in range(1, config.retry_limit + 2):
        try:
            pivots = generate_pivot_samples(
                description, config.pivot_count, gateway, templates, node_id=node_id
            )
            spec = determine_dimension(
                description, pivots, gateway, templates,
                forbidden=forbidden, retry_limit=config.retry_limit,
            )
            spec = complement_attributes(
                description, spec, gateway, templates, node_id=node_id
            )
            spec.validate()
            return ExpansionOutcome(
                node_id=node_id, result="split", dimension=spec, attempts=attempt,
                request_ids=[f"pivot:{node_id}", f"dimension:{node_id}", f"coverage:{node_id}"],
            )
        except (GatewayError, PartitionError, InvalidDimensionError) as exc:
            last_error = exc
            logger.warning("expansion attempt %d for %s failed: %s", attempt, node_id, exc)
    return ExpansionOutcome(
        node_id=node_id,
        result="terminalized",
        reason=f"{type(last_error).__name__}: {last_error}",
        attempts=config.retry_limit + 1,
    )


def build_tree(
    root_description: str,
    config: PartitionConfig,
    gateway: Gateway,
    templates: TemplateSet,
    *,
    checkpoint_path: str | None = None,
    after_attach: Callable[[SpaceTree, str], None] | None = None,
) -> tuple[SpaceTree, BuildReport]:
    """Build a complete partitioning tree from scratch."""
    tree = SpaceTree.new(root_description, config)
    return _run_build(
        tree, gateway, templates,
        checkpoint_path=checkpoint_path, after_attach=after_attach,
    )


def resume_build(
    checkpoint_path: str,
    gateway: Gateway,
    templates: TemplateSet,
    *,
    config: PartitionConfig | None = None,
    after_attach: Callable[[SpaceTree, str], None] | None = None,
) -> tuple[SpaceTree, BuildReport]:
    """Continue a checkpointed build from its persisted frontier.

    A completed checkpoint comes back unchanged with zero provider calls.
    A caller-supplied config must agree with the persisted one.
    """
    tree = tree_io.load(checkpoint_path)
    if config is not None and config != tree.config:
        raise ConfigMismatchError(
            "checkpoint was built with a different config; refusing to resume"
        )
    if tree.complete:
        return tree, BuildReport()
    return _run_build(
        tree, gateway, templates,
        checkpoint_path=checkpoint_path, after_attach=after_attach,
    )


def _run_build(
    tree: SpaceTree,
    gateway: Gateway,
    templates: TemplateSet,
    *,
    checkpoint_path: str | None,
    after_attach: Callable[[SpaceTree, str], None] | None,
) -> tuple[SpaceTree, BuildReport]:
    config = tree.config
    report = BuildReport()

    def checkpoint() -> None:
        if checkpoint_path:
            save(tree, checkpoint_path)

    while tree.frontier:
        depth = tree.node(tree.frontier[0]).depth
        wave = [nid for nid in tree.frontier if tree.node(nid).depth == depth]

        if depth >= config.max_depth:
            for node_id in wave:
                tree.mark_leaf(node_id)
                report.outcomes.append(
                    ExpansionOutcome(node_id=node_id, result="leaf")
                )
                checkpoint()
            continue

        if len(wave) == 1 or config.max_inflight_requests == 1:
            outcomes = [expand_node(tree, nid, gateway, templates) for nid in wave]
        else:
            workers = min(len(wave), config.max_inflight_requests)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(
                    pool.map(lambda nid: expand_node(tree, nid, gateway, templates), wave)
                )

        # Attach strictly in queue order so concurrency cannot reshape the tree.
        for outcome in outcomes:
            if outcome.result == "split":
                tree.attach_split(outcome.node_id, outcome.dimension)
                report.outcomes.append(outcome)
                checkpoint()
                if after_attach is not None:
                    after_attach(tree, outcome.node_id)
            else:
                tree.mark_leaf(outcome.node_id)
                report.outcomes.append(outcome)
                checkpoint()
                logger.warning(
                    "node %s terminalized at depth %d: %s",
                    outcome.node_id, depth, outcome.reason,
                )

    tree.complete = True
    tree.validate_structure()
    checkpoint()
    return tree, report


__all__ = [
    "PivotSet",
    "ExpansionOutcome",
    "BuildReport",
    "generate_pivot_samples",
    "determine_dimension",
    "complement_attributes",
    "expand_node",
    "build_tree",
    "resume_build",
    "PIVOT_TEMPERATURE",
    "DIMENSION_TEMPERATURE",
    "COVERAGE_TEMPERATURE",
]

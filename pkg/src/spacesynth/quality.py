"""Near-duplicate filtering and corpus diversity scoring.

Near-duplicate filtering uses ROUGE-L F1 (longest common subsequence) over
case-folded, punctuation-split tokens at a configurable threshold. Diversity
is the mean pairwise cosine similarity of instruction embeddings; lower means
more diverse. At scale the pair set is sampled without replacement under a
fixed seed instead of enumerated exhaustively.
"""

from __future__ import annotations

import hashlib
import json
import re
import random
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCorpusError
from .gateway import Gateway
from .synthesis import Dataset

_TOKEN_RE = re.compile(r"[0-9a-z]+")

DEFAULT_PAIR_BUDGET = 100_000
EMBED_BATCH = 256


def tokenize(text: str) -> list[str]:
    """Case-folded alphanumeric tokens; punctuation and whitespace split."""
    return _TOKEN_RE.findall(text.casefold())


def lcs_length(a: list[str], b: list[str]) -> int:
    """Longest common subsequence length, two-row dynamic program."""
    if not a or not b:
        return 0
    if len(b) > len(a):
        a, b = b, a
    previous = [0] * (len(b) + 1)
    current = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            if ai == b[j - 1]:
                current[j] = previous[j - 1] + 1
            else:
                current[j] = max(previous[j], current[j - 1])
        previous, current = current, previous
    return previous[len(b)]


def rouge_l(candidate: list[str], reference: list[str]) -> float:
    """ROUGE-L F1 between two token sequences.

    With P = LCS/|candidate| and R = LCS/|reference|, the balanced F1 is
    2PR/(P+R); zero when either sequence is empty or nothing is shared.
    Symmetric in its arguments.
    """
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2 * precision * recall / (precision + recall)


def filter_near_duplicates(
    dataset: Dataset, threshold: float
) -> tuple[Dataset, list[dict]]:
    """Greedy scan in dataset order: drop a record iff its ROUGE-L against an
    already-kept record exceeds the threshold (the first occurrence wins).

    Only candidate pairs pay for the LCS: since F1 equals 2·LCS/(|a|+|b|) and
    LCS is bounded by the token-multiset overlap m, any pair with
    2m/(|a|+|b|) <= threshold can be skipped without changing the result.
    Returns the kept dataset and a removal log.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")

    kept_records = []
    removed: list[dict] = []
    kept_tokens: list[list[str]] = []
    kept_counts: list[Counter] = []
    token_index: dict[str, list[int]] = {}

    for record in dataset.records:
        tokens = tokenize(record.instruction)
        counts = Counter(tokens)
        duplicate_of = None
        score = 0.0

        candidates: set[int] = set()
        for token in counts:
            candidates.update(token_index.get(token, ()))
        for idx in sorted(candidates):
            other = kept_counts[idx]
            overlap = sum(min(c, other[t]) for t, c in counts.items() if t in other)
            bound = 2 * overlap / (len(tokens) + len(kept_tokens[idx]))
            if bound <= threshold:
                continue
            value = rouge_l(tokens, kept_tokens[idx])
            if value > threshold:
                duplicate_of = kept_records[idx].id
                score = value
                break

        if duplicate_of is not None:
            removed.append(
                {"id": record.id, "kept_id": duplicate_of, "score": round(score, 6)}
            )
            continue
        position = len(kept_records)
        kept_records.append(record)
        kept_tokens.append(tokens)
        kept_counts.append(counts)
        for token in counts:
            token_index.setdefault(token, []).append(position)

    kept = Dataset(
        records=kept_records,
        tree_fingerprint=dataset.tree_fingerprint,
        deduped=True,
        answered=dataset.answered,
        baseline=dataset.baseline,
        partial=dataset.partial,
        failures=list(dataset.failures),
    )
    return kept, removed


# -- diversity -------------------------------------------------------------------


@dataclass(frozen=True)
class SimilarityMatrixSpec:
    """How the pairwise similarity statistic is estimated for one corpus."""

    corpus_size: int
    mode: str  # "exhaustive" | "sampled"
    pair_count: int
    seed: int = 0

    @classmethod
    def for_corpus(
        cls, corpus_size: int, *, pair_budget: int = DEFAULT_PAIR_BUDGET, seed: int = 0
    ) -> "SimilarityMatrixSpec":
        total = corpus_size * (corpus_size - 1) // 2
        if total <= pair_budget:
            return cls(corpus_size=corpus_size, mode="exhaustive", pair_count=total)
        return cls(corpus_size=corpus_size, mode="sampled", pair_count=pair_budget, seed=seed)

    def __post_init__(self):
        total = self.corpus_size * (self.corpus_size - 1) // 2
        if self.mode not in ("exhaustive", "sampled"):
            raise ValueError(f"unknown estimator mode {self.mode!r}")
        if self.pair_count < 1 or self.pair_count > total:
            raise ValueError(
                f"pair_count must be in [1, {total}] for {self.corpus_size} records"
            )


@dataclass(frozen=True)
class DiversityReport:
    """Mean pairwise cosine similarity; lower = more diverse."""

    score: float
    pair_count: int
    estimator: str
    seed: int
    embedding_model: str
    corpus_fingerprint: str
    corpus_size: int

    def to_json_dict(self) -> dict:
        return {
            "score": round(self.score, 8),
            "pair_count": self.pair_count,
            "estimator": self.estimator,
            "seed": self.seed,
            "embedding_model": self.embedding_model,
            "corpus_fingerprint": self.corpus_fingerprint,
            "corpus_size": self.corpus_size,
        }


def corpus_fingerprint(texts: list[str]) -> str:
    digest = hashlib.sha256("\x00".join(texts).encode("utf-8")).hexdigest()
    return f"sha256:{digest}"


def _pair_from_rank(rank: int) -> tuple[int, int]:
    """Map a rank in [0, n(n-1)/2) to the pair (i, j), i < j, enumerating
    (0,1), (0,2), ..., (1,2), ... without materializing the list."""
    # j is the smallest integer with j(j+1)/2 > rank when counting by the
    # second element; use the triangular-number inverse.
    j = int((1 + (1 + 8 * rank) ** 0.5) / 2)
    while j * (j - 1) // 2 > rank:
        j -= 1
    while (j + 1) * j // 2 <= rank:
        j += 1
    i = rank - j * (j - 1) // 2
    return i, j


def _embed_corpus(texts: list[str], gateway: Gateway) -> np.ndarray:
    chunks = []
    for start in range(0, len(texts), EMBED_BATCH):
        chunk = texts[start : start + EMBED_BATCH]
        chunks.append(gateway.embed(chunk, purpose="diversity"))
    vectors = np.vstack(chunks)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return vectors / norms


def mean_pairwise_cosine(
    dataset: Dataset,
    gateway: Gateway,
    spec: SimilarityMatrixSpec | None = None,
    *,
    pair_budget: int = DEFAULT_PAIR_BUDGET,
    seed: int = 0,
) -> DiversityReport:
    """Embed the instructions and average cosine similarity over pairs.

    Pairs are enumerated exhaustively when the corpus allows, otherwise a
    seeded sample without replacement of ``pair_budget`` pairs stands in.
    """
    texts = [record.instruction for record in dataset.records]
    if len(texts) < 2:
        raise EmptyCorpusError("diversity needs at least two records")
    if spec is None:
        spec = SimilarityMatrixSpec.for_corpus(
            len(texts), pair_budget=pair_budget, seed=seed
        )
    if spec.corpus_size != len(texts):
        raise ValueError("similarity spec was built for a different corpus size")

    vectors = _embed_corpus(texts, gateway)

    if spec.mode == "exhaustive":
        sims = vectors @ vectors.T
        n = len(texts)
        upper = sims[np.triu_indices(n, k=1)]
        score = float(upper.mean())
    else:
        total = len(texts) * (len(texts) - 1) // 2
        rng = random.Random(spec.seed)
        ranks = rng.sample(range(total), spec.pair_count)
        left = np.array([_pair_from_rank(r)[0] for r in ranks])
        right = np.array([_pair_from_rank(r)[1] for r in ranks])
        score = float(np.sum(vectors[left] * vectors[right], axis=1).mean())

    return DiversityReport(
        score=score,
        pair_count=spec.pair_count,
        estimator=spec.mode,
        seed=spec.seed if spec.mode == "sampled" else 0,
        embedding_model=gateway.embedding_model,
        corpus_fingerprint=corpus_fingerprint(texts),
        corpus_size=len(texts),
    )


def diversity_compare(
    datasets: list[tuple[str, Dataset]],
    gateway: Gateway,
    *,
    pair_budget: int = DEFAULT_PAIR_BUDGET,
    seed: int = 0,
) -> dict:
    """Score several corpora under identical estimator settings and rank them
    most-diverse (lowest score) first."""
    if len(datasets) < 2:
        raise ValueError("comparison needs at least two datasets")
    reports = [
        (
            name,
            mean_pairwise_cosine(dataset, gateway, pair_budget=pair_budget, seed=seed),
        )
        for name, dataset in datasets
    ]
    ranking = [name for name, report in sorted(reports, key=lambda item: item[1].score)]
    return {
        "reports": {name: report.to_json_dict() for name, report in reports},
        "ranking": ranking,
    }


def write_report(obj: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, ensure_ascii=False, indent=2) + "\n")


__all__ = [
    "tokenize",
    "lcs_length",
    "rouge_l",
    "filter_near_duplicates",
    "SimilarityMatrixSpec",
    "DiversityReport",
    "mean_pairwise_cosine",
    "diversity_compare",
    "corpus_fingerprint",
    "write_report",
    "DEFAULT_PAIR_BUDGET",
]

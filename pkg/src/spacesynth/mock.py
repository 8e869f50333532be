"""Deterministic in-process mock provider.

The mock answers every pipeline prompt with content derived purely from the
prompt text and a seed, so a whole build is reproducible byte-for-byte, runs
offline, and is immune to call interleaving under concurrency.

Two reply flavors for sample generation:

* ``uniform`` — every node splits into the same number of attribute values;
  tree shape is exactly ``branching ** depth`` leaves, which the structural
  test-suite counts on.
* ``centroid`` — each leaf's samples cluster around that leaf's attribute
  tokens while bare-description (baseline) samples all sit in one global
  mode. Paired with the hashed bag-of-tokens embedder this reproduces the
  directional diversity gap between tree-guided and fixed-temperature data.

Scripted overrides and a failure queue cover the awkward cases: duplicate
pivots, malformed blocks, rate-limit bursts, oversized value pools.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gateway import ProviderReply, ProviderRequest, RequestKind, Transport, TransportFailure

_COUNT_RE = re.compile(r"exactly (\d+)")
_CONSTRAINT_RE = re.compile(r"constrained by: ([^\n]+)")
_NUMBERED_RE = re.compile(r"^\s*\d+\.\s+(.*\S)\s*$", re.MULTILINE)


def _digest(*parts: str) -> str:
    joined = "\x00".join(parts)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def hash_bag_embed(text: str, *, dim: int = 256, seed: int = 0) -> np.ndarray:
    """Seeded hashed bag-of-tokens embedding, L2-normalized.

    Tokens are case-folded alphanumeric runs; each token adds +/-1 (signed
    hashing) to one of ``dim`` buckets. Deterministic, cheap, and similar
    texts land closer in cosine than dissimilar ones, which is all the
    diversity tests need.
    """
    vector = np.zeros(dim, dtype=np.float64)
    tokens = re.findall(r"[0-9a-z]+", text.casefold())
    for token in tokens:
        h = hashlib.blake2s(token.encode("utf-8"), key=str(seed).encode()).digest()
        bucket = int.from_bytes(h[:4], "big") % dim
        sign = 1.0 if h[4] % 2 == 0 else -1.0
        vector[bucket] += sign
    norm = np.linalg.norm(vector)
    if norm > 0:
        vector /= norm
    return vector


def parse_constraints(prompt: str) -> list[tuple[str, str]]:
    """(dimension, value) pairs of the node description embedded in a prompt."""
    match = _CONSTRAINT_RE.search(prompt)
    if not match:
        return []
    pairs = []
    for part in match.group(1).split("; "):
        if " = " in part:
            name, value = part.split(" = ", 1)
            pairs.append((name.strip(), value.strip().rstrip(".")))
    return pairs


def _requested_count(prompt: str, default: int = 10) -> int:
    match = _COUNT_RE.search(prompt)
    return int(match.group(1)) if match else default


@dataclass
class Rule:
    """Scripted override: the first rule whose matcher accepts the request
    supplies the reply (or failure) instead of the default responder."""

    matcher: Callable[[ProviderRequest], bool]
    replies: list[str | Exception] = field(default_factory=list)
    consume: bool = True  # drop the rule once its replies run out


class ScriptedMockTransport(Transport):
    """Rule-based deterministic provider double.

    Default replies are pure functions of (prompt, seed); ``rules`` and
    ``failures`` inject scripted behavior for specific tests.
    """

    def __init__(
        self,
        *,
        seed: int = 0,
        branching: int = 3,
        flavor: str = "uniform",
        embed_dim: int = 256,
        latency_tokens: bool = True,
    ):
        if flavor not in ("uniform", "centroid"):
            raise ValueError(f"unknown mock flavor {flavor!r}")
        self.seed = seed
        self.branching = branching
        self.flavor = flavor
        self.embed_dim = embed_dim
        self.latency_tokens = latency_tokens
        self.rules: list[Rule] = []
        self.failures: list[TransportFailure] = []
        self._lock = threading.Lock()

    # -- scripting hooks ------------------------------------------------------

    def add_rule(
        self,
        matcher: Callable[[ProviderRequest], bool],
        *replies: str | Exception,
        consume: bool = True,
    ) -> None:
        self.rules.append(Rule(matcher, list(replies), consume))

    def fail_next(self, *failures: TransportFailure) -> None:
        """Queue transport failures consumed before any reply is produced."""
        self.failures.extend(failures)

    # -- transport ------------------------------------------------------------

    def send(self, request: ProviderRequest) -> ProviderReply:
        with self._lock:
            if self.failures:
                raise self.failures.pop(0)
            for rule in self.rules:
                if rule.replies and rule.matcher(request):
                    scripted = rule.replies.pop(0)
                    if not rule.replies and rule.consume:
                        self.rules.remove(rule)
                    if isinstance(scripted, Exception):
                        raise scripted
                    return self._reply_text(scripted)

        if request.kind is RequestKind.EMBED:
            vectors = np.stack(
                [hash_bag_embed(t, dim=self.embed_dim, seed=self.seed)
                 for t in request.inputs or ()]
            )
            return ProviderReply(vectors=vectors, usage={"prompt_tokens": len(request.inputs or ())})
        return self._reply_text(self._respond(request))

    def _reply_text(self, text: str) -> ProviderReply:
        usage = {}
        if self.latency_tokens:
            usage = {"prompt_tokens": 0, "completion_tokens": max(1, len(text) // 4)}
        return ProviderReply(text=text, usage=usage)

    # -- default responders ----------------------------------------------------

    def _respond(self, request: ProviderRequest) -> str:
        prompt = request.prompt or ""
        purpose = request.purpose
        if purpose == "pivot":
            return self._pivot_reply(prompt)
        if purpose == "dimension":
            return self._dimension_reply(prompt)
        if purpose == "coverage":
            return self._coverage_reply(prompt)
        if purpose in ("samples", "baseline"):
            return self._samples_reply(prompt)
        if purpose == "answer":
            return self._answer_reply(prompt)
        if purpose == "value-draw":
            return self._value_draw_reply(prompt)
        # Unlabelled call (ad-hoc generate in tests): echo something stable.
        return self._fenced({"samples": [f"reply {_digest(prompt, str(self.seed))[:12]}"]})

    @staticmethod
    def _fenced(obj: dict) -> str:
        return "```json\n" + json.dumps(obj, ensure_ascii=False) + "\n```"

    def _pivot_reply(self, prompt: str) -> str:
        count = _requested_count(prompt)
        tag = _digest("pivot", prompt, str(self.seed))[:8]
        samples = [f"pivot {tag} sample {i}" for i in range(count)]
        return self._fenced({"samples": samples})

    def _dimension_reply(self, prompt: str) -> str:
        depth = len(parse_constraints(prompt))
        pivot_count = len(_NUMBERED_RE.findall(prompt)) or 2
        name = f"facet-{depth + 1}"
        # one fused token per value so hashed-bag embeddings keep leaves apart
        values = [f"f{depth + 1}v{j + 1}" for j in range(self.branching)]
        assignment = [values[i % len(values)] for i in range(pivot_count)]
        return self._fenced(
            {
                "dimension": name,
                "rationale": f"splits the space along {name}",
                "values": values,
                "assignment": assignment,
            }
        )

    def _coverage_reply(self, prompt: str) -> str:
        observed = _NUMBERED_RE.findall(prompt)
        values = observed or [f"f1v{j + 1}" for j in range(self.branching)]
        return self._fenced({"values": values, "unbounded": False})

    def _samples_reply(self, prompt: str) -> str:
        count = _requested_count(prompt)
        constraints = parse_constraints(prompt)
        tokens = " ".join(value for _, value in constraints)
        if not tokens and self.flavor == "centroid":
            # unconstrained generation collapses onto one global mode
            tokens = "shared global mode"
        samples = []
        for i in range(count):
            body = f"instruction {tokens} case {i}".replace("  ", " ")
            if self.flavor == "uniform":
                # enough unique tokens that sibling samples stay below the
                # 0.7 near-duplicate threshold at shallow depths
                h = _digest(prompt, str(i), str(self.seed))
                body += f" {h[:6]} {h[6:12]} {h[12:18]}"
            samples.append(body)
        return self._fenced({"samples": samples})

    def _answer_reply(self, prompt: str) -> str:
        return self._fenced({"answer": f"worked answer {_digest(prompt, str(self.seed))[:10]}"})

    def _value_draw_reply(self, prompt: str) -> str:
        return self._fenced({"values": [f"drawn-{_digest(prompt, str(self.seed))[:6]}"]})


def match_purpose(purpose: str) -> Callable[[ProviderRequest], bool]:
    return lambda request: request.purpose == purpose


def match_contains(fragment: str, purpose: str | None = None) -> Callable[[ProviderRequest], bool]:
    def matcher(request: ProviderRequest) -> bool:
        if purpose is not None and request.purpose != purpose:
            return False
        return fragment in (request.prompt or "")

    return matcher


def rate_limit_failure() -> TransportFailure:
    return TransportFailure("429 rate limited", retryable=True, status=429, kind="rate_limited")


def timeout_failure() -> TransportFailure:
    return TransportFailure("simulated timeout", retryable=True, kind="timeout")


__all__ = [
    "ScriptedMockTransport",
    "Rule",
    "hash_bag_embed",
    "parse_constraints",
    "match_purpose",
    "match_contains",
    "rate_limit_failure",
    "timeout_failure",
]

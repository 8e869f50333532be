from __future__ import annotations

import pytest

from spacesynth.gateway import Gateway, RetryPolicy
from spacesynth.mock import ScriptedMockTransport
from spacesynth.partition import build_tree
from spacesynth.templates import TemplateSet
from spacesynth.tree import PartitionConfig


def make_gateway(
    transport=None,
    *,
    seed: int = 7,
    branching: int = 3,
    flavor: str = "uniform",
    retry_limit: int = 2,
    max_inflight: int = 4,
) -> Gateway:
    """Gateway over the scripted mock with zero backoff (tests never sleep)."""
    transport = transport or ScriptedMockTransport(
        seed=seed, branching=branching, flavor=flavor
    )
    return Gateway(
        transport,
        retry=RetryPolicy(retry_limit=retry_limit, base_delay_s=0.0, jitter=False),
        max_inflight=max_inflight,
        generate_model="mock-generate",
        embedding_model="mock-embed",
    )


def small_config(**overrides) -> PartitionConfig:
    defaults = dict(
        max_depth=2,
        pivot_count=4,
        max_attribute_values=10,
        samples_per_leaf=3,
        rng_seed=7,
        dedup_threshold=0.7,
        retry_limit=2,
        max_inflight_requests=4,
    )
    defaults.update(overrides)
    return PartitionConfig(**defaults)


ROOT_DESCRIPTION = "GSM8K-style mathematical questions about playing football"


def build_uniform_tree(depth: int, *, branching: int = 3, seed: int = 7, **overrides):
    """Complete uniform mock tree: every expanded node splits the same way."""
    config = small_config(max_depth=depth, rng_seed=seed, **overrides)
    gateway = make_gateway(seed=seed, branching=branching,
                           retry_limit=config.retry_limit,
                           max_inflight=config.max_inflight_requests)
    templates = TemplateSet.bundled("gsm")
    tree, report = build_tree(ROOT_DESCRIPTION, config, gateway, templates)
    return tree, report, gateway


@pytest.fixture
def gsm_templates() -> TemplateSet:
    return TemplateSet.bundled("gsm")

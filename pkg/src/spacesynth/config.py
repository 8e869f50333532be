"""Pipeline configuration: one YAML document drives a whole run.

The file names the task description, the tree/build hyperparameters, the
provider endpoint (or the in-process mock), the template set, and the stage
temperatures. Every run freezes a copy of the parsed config into its manifest
so artifacts stay explainable after the fact.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .gateway import Gateway, OpenAIHttpTransport, RetryPolicy
from .mock import ScriptedMockTransport
from .templates import TemplateSet
from .tree import PartitionConfig


@dataclass(frozen=True)
class ProviderSettings:
    kind: str = "openai"  # "openai" (any compatible endpoint) or "mock"
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    generate_model: str = "gpt-4o"
    embedding_model: str = "text-embedding-3-small"
    timeout_s: float = 120.0
    transcript_log: str | None = None
    backoff_base_s: float = 0.5
    backoff_factor: float = 2.0
    backoff_cap_s: float = 30.0
    mock_branching: int = 3
    mock_flavor: str = "uniform"


@dataclass(frozen=True)
class Temperatures:
    pivot: float = 1.0
    dimension: float = 0.2
    coverage: float = 0.2
    samples: float = 1.0
    answer: float = 0.2
    baseline: float = 0.7


@dataclass
class RunConfig:
    root_description: str
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    temperatures: Temperatures = field(default_factory=Temperatures)
    template_task: str = "gsm"
    template_dir: str | None = None
    output_dir: str = "runs"

    def to_snapshot(self) -> dict:
        """Plain-dict copy embedded in run manifests."""
        return {
            "root_description": self.root_description,
            "partition": vars(self.partition) | {},
            "provider": vars(self.provider) | {},
            "temperatures": vars(self.temperatures) | {},
            "template_task": self.template_task,
            "template_dir": self.template_dir,
            "output_dir": self.output_dir,
        }


def _section(doc: dict, name: str) -> dict:
    value = doc.get(name) or {}
    if not isinstance(value, dict):
        raise ValueError(f"config section {name!r} must be a mapping")
    return value


def load_config(path: str | Path) -> RunConfig:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a mapping at the top level")
    if not doc.get("root_description"):
        raise ValueError("config needs a non-empty root_description")

    partition = PartitionConfig(**_section(doc, "partition"))

    provider_doc = _section(doc, "provider")
    mock_doc = provider_doc.pop("mock", {}) or {}
    provider = ProviderSettings(
        **provider_doc,
        **{f"mock_{k}": v for k, v in mock_doc.items()},
    )
    if provider.kind not in ("openai", "mock"):
        raise ValueError(f"unknown provider kind {provider.kind!r}")

    temps = Temperatures(**_section(doc, "temperatures"))

    templates_doc = _section(doc, "templates")
    return RunConfig(
        root_description=doc["root_description"],
        partition=partition,
        provider=provider,
        temperatures=temps,
        template_task=templates_doc.get("task", "gsm"),
        template_dir=templates_doc.get("directory"),
        output_dir=doc.get("output_dir", "runs"),
    )


def config_from_snapshot(snapshot: dict) -> RunConfig:
    """Rebuild a RunConfig from the frozen copy in a run manifest."""
    return RunConfig(
        root_description=snapshot["root_description"],
        partition=PartitionConfig(**snapshot["partition"]),
        provider=ProviderSettings(**snapshot["provider"]),
        temperatures=Temperatures(**snapshot["temperatures"]),
        template_task=snapshot.get("template_task", "gsm"),
        template_dir=snapshot.get("template_dir"),
        output_dir=snapshot.get("output_dir", "runs"),
    )


def build_gateway(config: RunConfig, *, transcript_path: str | None = None) -> Gateway:
    provider = config.provider
    if provider.kind == "mock":
        transport = ScriptedMockTransport(
            seed=config.partition.rng_seed,
            branching=provider.mock_branching,
            flavor=provider.mock_flavor,
        )
        # deterministic, offline: no jitter and no real waiting
        retry = RetryPolicy(
            retry_limit=config.partition.retry_limit,
            base_delay_s=0.0, factor=1.0, max_delay_s=0.0, jitter=False,
        )
    else:
        transport = OpenAIHttpTransport(
            provider.base_url,
            generate_model=provider.generate_model,
            embedding_model=provider.embedding_model,
            api_key_env=provider.api_key_env,
            timeout_s=provider.timeout_s,
        )
        retry = RetryPolicy(
            retry_limit=config.partition.retry_limit,
            base_delay_s=provider.backoff_base_s,
            factor=provider.backoff_factor,
            max_delay_s=provider.backoff_cap_s,
        )
    return Gateway(
        transport,
        retry=retry,
        max_inflight=config.partition.max_inflight_requests,
        generate_model=provider.generate_model if provider.kind != "mock" else "mock-generate",
        embedding_model=provider.embedding_model if provider.kind != "mock" else "mock-embed",
        transcript_path=transcript_path or provider.transcript_log,
        rng=random.Random(config.partition.rng_seed),
    )


def load_templates(config: RunConfig) -> TemplateSet:
    if config.template_dir:
        return TemplateSet(Path(config.template_dir))
    return TemplateSet.bundled(config.template_task)


__all__ = [
    "ProviderSettings",
    "Temperatures",
    "RunConfig",
    "load_config",
    "config_from_snapshot",
    "build_gateway",
    "load_templates",
]

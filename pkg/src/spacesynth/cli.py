"""Command-line surface tying the pipeline stages into reproducible runs.

Every command works inside a run directory: the first stage freezes the
config into ``manifest.json`` and later stages read it back from there, so a
run's artifacts are always explained by exactly one manifest. All randomness
flows from the seed in the config; two runs with the same config, templates,
seed, and mock provider produce byte-identical data and report files.

Commands: partition, resume, synthesize, answer, dedup, diversity, baseline.
"""

from __future__ import annotations

import argparse
import sys
import time
import uuid
from pathlib import Path

from . import partition as partition_mod
from . import quality, synthesis
from . import tree as tree_mod
from .config import (
    RunConfig,
    build_gateway,
    config_from_snapshot,
    load_config,
    load_templates,
)
from .errors import FingerprintMismatchError, SpaceSynthError
from .manifest import RunManifest

TREE_FILE = "tree.json"
BUILD_REPORT_FILE = "build_report.json"
DATASET_FILE = "dataset.jsonl"
DEDUPED_FILE = "dataset.deduped.jsonl"
REMOVAL_LOG_FILE = "removal_log.json"
DIVERSITY_REPORT_FILE = "diversity_report.json"
BASELINE_FILE = "baseline.jsonl"


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except FingerprintMismatchError as exc:
        print(f"error: fingerprint mismatch: {exc}", file=sys.stderr)
        return 2
    except (SpaceSynthError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spacesynth",
        description="Partition a data space into a subspace tree and synthesize "
        "training data from its leaves.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="build (or resume) the partitioning tree")
    p.add_argument("--config", required=True, help="YAML pipeline config")
    p.add_argument("--run-dir", required=True, help="run directory for artifacts")
    p.add_argument("--run-id", default=None, help="explicit run id (default: random)")
    p.set_defaults(handler=cmd_partition)

    p = sub.add_parser("resume", help="continue an interrupted tree build")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(handler=cmd_resume)

    p = sub.add_parser("synthesize", help="generate instructions from every leaf")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--count-per-leaf", type=int, default=None)
    p.add_argument("--subsample", type=int, default=None,
                   help="cut the corpus down to this many records")
    p.add_argument("--strata", choices=("uniform", "per-leaf"), default="uniform",
                   help="subsample over all records or evenly per leaf")
    p.add_argument("--seed", type=int, default=None,
                   help="subsample seed (default: the config seed)")
    p.set_defaults(handler=cmd_synthesize)

    p = sub.add_parser("answer", help="pair every instruction with an answer")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--dataset", default=None, help="dataset path (default: run dataset)")
    p.set_defaults(handler=cmd_answer)

    p = sub.add_parser("dedup", help="drop near-duplicate instructions")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--threshold", type=float, default=None,
                   help="ROUGE-L threshold (default: from config)")
    p.set_defaults(handler=cmd_dedup)

    p = sub.add_parser("diversity", help="score corpus diversity (mean pairwise cosine)")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--dataset", action="append", default=None,
                   help="dataset path; repeat to compare several")
    p.add_argument("--pair-budget", type=int, default=quality.DEFAULT_PAIR_BUDGET)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_diversity)

    p = sub.add_parser("baseline", help="fixed-temperature generation, no tree")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--run-id", default=None)
    p.add_argument("--description", default=None,
                   help="override the config root description")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--temperature", type=float, default=None,
                   help="sampling temperature (default: from config, 0.7)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_baseline)

    return parser


# -- helpers ---------------------------------------------------------------------


def _open_run(run_dir: str, config_path: str | None, run_id: str | None) -> tuple[RunManifest, RunConfig]:
    """Load the manifest (and frozen config) of a run, creating both on the
    first stage when a config file is given."""
    if RunManifest.exists(run_dir):
        manifest = RunManifest.load(run_dir)
        return manifest, config_from_snapshot(manifest.data["config"])
    if config_path is None:
        raise SpaceSynthError(
            f"{run_dir} has no manifest; run `spacesynth partition --config ...` first"
        )
    config = load_config(config_path)
    manifest = RunManifest.create(
        run_dir, run_id or uuid.uuid4().hex[:12], config.to_snapshot()
    )
    return manifest, config


def _check_tree_fingerprint(run_dir: Path, dataset: synthesis.Dataset) -> None:
    tree_path = run_dir / TREE_FILE
    if dataset.tree_fingerprint is None or not tree_path.is_file():
        return
    actual = tree_mod.fingerprint(tree_mod.load(tree_path))
    if actual != dataset.tree_fingerprint:
        raise FingerprintMismatchError(
            f"dataset was synthesized from tree {dataset.tree_fingerprint}, "
            f"but {tree_path} is {actual}"
        )


def _stage(manifest: RunManifest, gateway, name: str, started: float, **fields) -> None:
    manifest.update_stage(
        name, status="complete", wall_s=round(time.monotonic() - started, 3), **fields
    )
    manifest.add_usage(gateway.usage)


# -- commands --------------------------------------------------------------------


def cmd_partition(args) -> int:
    run_dir = Path(args.run_dir)
    manifest, config = _open_run(args.run_dir, args.config, args.run_id)
    gateway = build_gateway(config)
    templates = load_templates(config)
    tree_path = run_dir / TREE_FILE
    started = time.monotonic()

    if tree_path.is_file():
        tree, report = partition_mod.resume_build(
            str(tree_path), gateway, templates, config=config.partition
        )
    else:
        tree, report = partition_mod.build_tree(
            config.root_description, config.partition, gateway, templates,
            checkpoint_path=str(tree_path),
        )

    report_path = run_dir / BUILD_REPORT_FILE
    report.write(str(report_path))
    manifest.register_artifact("tree", tree_path)
    manifest.register_artifact("build_report", report_path)
    _stage(manifest, gateway, "partition", started,
           path=str(tree_path), leaf_count=len(tree.leaf_nodes()),
           terminalized=len(report.failures))

    print(f"{len(tree.leaf_nodes())} leaves")
    if report.failures:
        print(f"{len(report.failures)} nodes terminalized early:")
        for outcome in report.failures:
            print(f"  {outcome.node_id}: {outcome.reason}")
    return 0


def cmd_resume(args) -> int:
    run_dir = Path(args.run_dir)
    manifest, config = _open_run(args.run_dir, None, None)
    gateway = build_gateway(config)
    templates = load_templates(config)
    started = time.monotonic()

    tree, report = partition_mod.resume_build(
        str(run_dir / TREE_FILE), gateway, templates, config=config.partition
    )
    report_path = run_dir / BUILD_REPORT_FILE
    if report.outcomes or not report_path.is_file():
        report.write(str(report_path))
    manifest.register_artifact("tree", run_dir / TREE_FILE)
    manifest.register_artifact("build_report", report_path)
    _stage(manifest, gateway, "partition", started,
           path=str(run_dir / TREE_FILE), leaf_count=len(tree.leaf_nodes()),
           terminalized=len(report.failures))
    print(f"{len(tree.leaf_nodes())} leaves")
    return 0


def cmd_synthesize(args) -> int:
    run_dir = Path(args.run_dir)
    manifest, config = _open_run(args.run_dir, None, None)
    gateway = build_gateway(config)
    templates = load_templates(config)
    tree = tree_mod.load(run_dir / TREE_FILE)
    started = time.monotonic()

    dataset = synthesis.synthesize_all(
        tree, config.partition, gateway, templates,
        count_per_leaf=args.count_per_leaf,
        temperature=config.temperatures.samples,
    )
    if args.subsample is not None:
        if args.subsample >= len(dataset.records):
            print(
                f"warning: subsample {args.subsample} >= corpus size "
                f"{len(dataset.records)}; keeping the full corpus",
                file=sys.stderr,
            )
        seed = args.seed if args.seed is not None else config.partition.rng_seed
        dataset = synthesis.subsample(
            dataset, args.subsample, mode=args.strata, seed=seed
        )

    dataset_path = run_dir / DATASET_FILE
    synthesis.write_dataset(dataset, dataset_path)
    manifest.register_artifact("dataset", dataset_path)
    manifest.register_artifact("dataset_manifest", synthesis.sidecar_path(dataset_path))
    _stage(manifest, gateway, "synthesize", started,
           path=str(dataset_path), records=len(dataset.records),
           failures=dataset.failures,
           dataset_fingerprint=synthesis.dataset_fingerprint(dataset_path))

    print(f"{len(dataset.records)} records -> {dataset_path}")
    if dataset.partial:
        print(f"warning: {len(dataset.failures)} leaves failed", file=sys.stderr)
    return 0


def cmd_answer(args) -> int:
    run_dir = Path(args.run_dir)
    manifest, config = _open_run(args.run_dir, None, None)
    gateway = build_gateway(config)
    templates = load_templates(config)
    dataset_path = Path(args.dataset) if args.dataset else run_dir / DATASET_FILE
    dataset = synthesis.load_dataset(dataset_path)
    _check_tree_fingerprint(run_dir, dataset)
    started = time.monotonic()

    answered = synthesis.generate_answers(
        dataset, gateway, templates,
        temperature=config.temperatures.answer,
        max_inflight=config.partition.max_inflight_requests,
    )
    synthesis.write_dataset(answered, dataset_path)
    new_failures = answered.failures[len(dataset.failures):]
    _stage(manifest, gateway, "answer", started,
           path=str(dataset_path),
           answered=sum(1 for r in answered.records if r.answer is not None),
           failures=new_failures,
           dataset_fingerprint=synthesis.dataset_fingerprint(dataset_path))

    done = sum(1 for r in answered.records if r.answer is not None)
    print(f"{done}/{len(answered.records)} records answered")
    if new_failures:
        print(f"warning: {len(new_failures)} records failed", file=sys.stderr)
    return 0


def cmd_dedup(args) -> int:
    run_dir = Path(args.run_dir)
    manifest, config = _open_run(args.run_dir, None, None)
    dataset_path = Path(args.dataset) if args.dataset else run_dir / DATASET_FILE
    dataset = synthesis.load_dataset(dataset_path)
    _check_tree_fingerprint(run_dir, dataset)
    threshold = (
        args.threshold if args.threshold is not None
        else config.partition.dedup_threshold
    )
    started = time.monotonic()

    kept, removed = quality.filter_near_duplicates(dataset, threshold)
    kept_path = run_dir / DEDUPED_FILE
    synthesis.write_dataset(kept, kept_path)
    log_path = run_dir / REMOVAL_LOG_FILE
    quality.write_report(
        {
            "threshold": threshold,
            "input_fingerprint": synthesis.dataset_fingerprint(dataset_path),
            "kept": len(kept.records),
            "removed": removed,
        },
        str(log_path),
    )
    manifest.register_artifact("deduped_dataset", kept_path)
    manifest.register_artifact("deduped_manifest", synthesis.sidecar_path(kept_path))
    manifest.register_artifact("removal_log", log_path)
    manifest.update_stage(
        "dedup", status="complete",
        wall_s=round(time.monotonic() - started, 3),
        threshold=threshold, kept=len(kept.records), removed=len(removed),
    )
    print(f"kept {len(kept.records)} records, removed {len(removed)}")
    return 0


def cmd_diversity(args) -> int:
    run_dir = Path(args.run_dir)
    manifest, config = _open_run(args.run_dir, None, None)
    gateway = build_gateway(config)
    seed = args.seed if args.seed is not None else config.partition.rng_seed
    started = time.monotonic()

    if args.dataset:
        paths = [Path(p) for p in args.dataset]
    else:
        deduped = run_dir / DEDUPED_FILE
        paths = [deduped if deduped.is_file() else run_dir / DATASET_FILE]

    if len(paths) == 1:
        dataset = synthesis.load_dataset(paths[0])
        report = quality.mean_pairwise_cosine(
            dataset, gateway, pair_budget=args.pair_budget, seed=seed
        )
        doc = report.to_json_dict() | {"dataset": paths[0].name}
        score_line = f"diversity score {report.score:.4f} over {report.pair_count} pairs"
    else:
        named = [(p.name, synthesis.load_dataset(p)) for p in paths]
        comparison = quality.diversity_compare(
            named, gateway, pair_budget=args.pair_budget, seed=seed
        )
        doc = comparison
        score_line = "ranking (most diverse first): " + " < ".join(comparison["ranking"])

    report_path = run_dir / DIVERSITY_REPORT_FILE
    quality.write_report(doc, str(report_path))
    manifest.register_artifact("diversity_report", report_path)
    _stage(manifest, gateway, "diversity", started, path=str(report_path))
    print(score_line)
    return 0


def cmd_baseline(args) -> int:
    run_dir = Path(args.run_dir)
    manifest, config = _open_run(args.run_dir, args.config, args.run_id)
    gateway = build_gateway(config)
    templates = load_templates(config)
    description = args.description or config.root_description
    temperature = (
        args.temperature if args.temperature is not None
        else config.temperatures.baseline
    )
    seed = args.seed if args.seed is not None else config.partition.rng_seed
    started = time.monotonic()

    dataset = synthesis.temperature_baseline(
        description, args.count, temperature, gateway, templates, seed
    )
    baseline_path = run_dir / BASELINE_FILE
    synthesis.write_dataset(dataset, baseline_path)
    manifest.register_artifact("baseline_dataset", baseline_path)
    manifest.register_artifact("baseline_manifest", synthesis.sidecar_path(baseline_path))
    _stage(manifest, gateway, "baseline", started,
           path=str(baseline_path), records=len(dataset.records),
           temperature=temperature,
           dataset_fingerprint=synthesis.dataset_fingerprint(baseline_path))
    print(f"{len(dataset.records)} baseline records -> {baseline_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

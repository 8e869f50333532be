from __future__ import annotations

import json

import pytest
import yaml

from spacesynth.cli import main
from spacesynth.manifest import RunManifest
from spacesynth.synthesis import load_dataset

from conftest import ROOT_DESCRIPTION


def write_config(tmp_path, **overrides) -> str:
    doc = {
        "root_description": ROOT_DESCRIPTION,
        "output_dir": str(tmp_path / "runs"),
        "partition": {
            "max_depth": 2,
            "pivot_count": 4,
            "max_attribute_values": 10,
            "samples_per_leaf": 3,
            "rng_seed": 42,
            "dedup_threshold": 0.7,
            "retry_limit": 1,
            "max_inflight_requests": 4,
        },
        "provider": {"kind": "mock", "mock": {"branching": 3, "flavor": "uniform"}},
        "templates": {"task": "gsm"},
    }
    for key, value in overrides.items():
        if isinstance(value, dict):
            doc[key] = {**doc.get(key, {}), **value}
        else:
            doc[key] = value
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def run_pipeline(tmp_path, run_name: str, config: str) -> str:
    run_dir = str(tmp_path / "runs" / run_name)
    assert main(["partition", "--config", config, "--run-dir", run_dir,
                 "--run-id", run_name]) == 0
    assert main(["synthesize", "--run-dir", run_dir]) == 0
    assert main(["dedup", "--run-dir", run_dir]) == 0
    assert main(["diversity", "--run-dir", run_dir]) == 0
    return run_dir


def test_partition_reports_leaf_count(tmp_path, capsys):
    config = write_config(tmp_path)
    run_dir = str(tmp_path / "runs" / "p")
    assert main(["partition", "--config", config, "--run-dir", run_dir]) == 0
    assert "9 leaves" in capsys.readouterr().out
    tree_doc = json.loads((tmp_path / "runs" / "p" / "tree.json").read_text())
    assert len(tree_doc["nodes"]) == 13


def test_partition_depth_zero_single_leaf(tmp_path, capsys):
    config = write_config(tmp_path, partition={"max_depth": 0})
    assert main(["partition", "--config", config,
                 "--run-dir", str(tmp_path / "runs" / "z")]) == 0
    assert "1 leaves" in capsys.readouterr().out


def test_partition_accepts_paper_scale_config(tmp_path):
    config = write_config(
        tmp_path,
        partition={"max_depth": 4, "pivot_count": 10, "max_attribute_values": 10,
                   "samples_per_leaf": 10},
    )
    run_dir = str(tmp_path / "runs" / "paper")
    assert main(["partition", "--config", config, "--run-dir", run_dir]) == 0
    persisted = json.loads((tmp_path / "runs" / "paper" / "tree.json").read_text())
    assert persisted["config"]["max_depth"] == 4
    assert persisted["config"]["pivot_count"] == 10
    manifest = RunManifest.load(run_dir)
    assert manifest.data["config"]["partition"]["max_depth"] == 4


def test_full_pipeline_and_manifest_chaining(tmp_path):
    config = write_config(tmp_path)
    run_dir = run_pipeline(tmp_path, "full", config)
    assert main(["answer", "--run-dir", run_dir]) == 0

    manifest = RunManifest.load(run_dir)
    stages = manifest.data["stages"]
    assert set(stages) >= {"partition", "synthesize", "dedup", "diversity", "answer"}
    assert all(s["status"] == "complete" for s in stages.values())
    assert manifest.data["provider_usage"]["generate_calls"] > 0

    dataset = load_dataset(manifest.artifact_path("dataset"))
    tree_doc = (manifest.artifact_path("tree")).read_text()
    from spacesynth.tree import fingerprint, from_json

    assert dataset.tree_fingerprint == fingerprint(from_json(tree_doc))
    assert manifest.orphans() == []


def test_two_runs_same_seed_are_byte_identical(tmp_path):
    config = write_config(tmp_path)
    dir_a = run_pipeline(tmp_path, "a", config)
    dir_b = run_pipeline(tmp_path, "b", config)
    from pathlib import Path

    for name in ("tree.json", "build_report.json", "dataset.jsonl",
                 "dataset.jsonl.manifest.json", "dataset.deduped.jsonl",
                 "removal_log.json", "diversity_report.json"):
        assert (Path(dir_a) / name).read_bytes() == (Path(dir_b) / name).read_bytes(), name


def test_synthesize_subsample_and_strata(tmp_path, capsys):
    config = write_config(tmp_path)
    run_dir = str(tmp_path / "runs" / "s")
    main(["partition", "--config", config, "--run-dir", run_dir])
    assert main(["synthesize", "--run-dir", run_dir, "--subsample", "10"]) == 0
    dataset = load_dataset(tmp_path / "runs" / "s" / "dataset.jsonl")
    assert len(dataset.records) == 10

    # clamping warns but keeps the corpus
    assert main(["synthesize", "--run-dir", run_dir, "--subsample", "9999"]) == 0
    err = capsys.readouterr().err
    assert "keeping the full corpus" in err
    dataset = load_dataset(tmp_path / "runs" / "s" / "dataset.jsonl")
    assert len(dataset.records) == 27

    assert main(["synthesize", "--run-dir", run_dir, "--subsample", "9",
                 "--strata", "per-leaf"]) == 0
    dataset = load_dataset(tmp_path / "runs" / "s" / "dataset.jsonl")
    leaf_ids = {r.leaf_id for r in dataset.records}
    assert len(dataset.records) == 9
    assert len(leaf_ids) == 9  # one record per leaf


def test_answer_rerun_makes_no_provider_calls(tmp_path):
    config = write_config(tmp_path)
    run_dir = run_pipeline(tmp_path, "ans", config)
    assert main(["answer", "--run-dir", run_dir]) == 0
    manifest = RunManifest.load(run_dir)
    calls_after_first = manifest.data["provider_usage"]["generate_calls"]
    assert main(["answer", "--run-dir", run_dir]) == 0
    manifest = RunManifest.load(run_dir)
    assert manifest.data["provider_usage"]["generate_calls"] == calls_after_first


def test_dedup_uses_config_threshold_by_default(tmp_path):
    config = write_config(tmp_path)
    run_dir = run_pipeline(tmp_path, "d", config)
    log = json.loads((tmp_path / "runs" / "d" / "removal_log.json").read_text())
    assert log["threshold"] == 0.7


def test_diversity_single_record_fails_nonzero(tmp_path, capsys):
    config = write_config(tmp_path, partition={"max_depth": 0, "samples_per_leaf": 1})
    run_dir = str(tmp_path / "runs" / "tiny")
    main(["partition", "--config", config, "--run-dir", run_dir])
    main(["synthesize", "--run-dir", run_dir])
    code = main(["diversity", "--run-dir", run_dir])
    assert code != 0
    assert "EmptyCorpusError" in capsys.readouterr().err


def test_diversity_compare_two_datasets(tmp_path):
    config = write_config(tmp_path)
    run_dir = run_pipeline(tmp_path, "cmp", config)
    assert main(["baseline", "--config", config, "--run-dir", run_dir,
                 "--count", "20"]) == 0
    assert main([
        "diversity", "--run-dir", run_dir,
        "--dataset", str(tmp_path / "runs" / "cmp" / "dataset.jsonl"),
        "--dataset", str(tmp_path / "runs" / "cmp" / "baseline.jsonl"),
    ]) == 0
    report = json.loads((tmp_path / "runs" / "cmp" / "diversity_report.json").read_text())
    assert set(report["reports"]) == {"dataset.jsonl", "baseline.jsonl"}
    assert len(report["ranking"]) == 2


def test_baseline_defaults_to_published_temperature(tmp_path):
    config = write_config(tmp_path)
    run_dir = str(tmp_path / "runs" / "bl")
    assert main(["baseline", "--config", config, "--run-dir", run_dir,
                 "--count", "5"]) == 0
    dataset = load_dataset(tmp_path / "runs" / "bl" / "baseline.jsonl")
    assert len(dataset.records) == 5
    assert all(r.temperature == 0.7 for r in dataset.records)
    assert all(r.leaf_id == "baseline" for r in dataset.records)


def test_baseline_reruns_identical(tmp_path):
    config = write_config(tmp_path)
    contents = []
    for name in ("b1", "b2"):
        run_dir = str(tmp_path / "runs" / name)
        assert main(["baseline", "--config", config, "--run-dir", run_dir,
                     "--count", "10", "--seed", "3"]) == 0
        contents.append((tmp_path / "runs" / name / "baseline.jsonl").read_bytes())
    assert contents[0] == contents[1]


def test_fingerprint_mismatch_rejected(tmp_path):
    config = write_config(tmp_path)
    run_dir = run_pipeline(tmp_path, "fp", config)
    # swap in a tree the dataset was not synthesized from
    other_config = write_config(tmp_path, partition={"max_depth": 1})
    other_dir = str(tmp_path / "runs" / "fp2")
    main(["partition", "--config", other_config, "--run-dir", other_dir])
    (tmp_path / "runs" / "fp" / "tree.json").write_text(
        (tmp_path / "runs" / "fp2" / "tree.json").read_text()
    )
    code = main(["answer", "--run-dir", run_dir])
    assert code == 2


def test_resume_command_completes_interrupted_build(tmp_path, monkeypatch):
    config = write_config(tmp_path)
    run_dir = str(tmp_path / "runs" / "res")

    import spacesynth.cli as cli_mod
    import spacesynth.partition as partition_mod

    calls = {"n": 0}
    original = partition_mod.build_tree

    def interrupting(*args, **kwargs):
        def bomb(tree, node_id):
            calls["n"] += 1
            if calls["n"] >= 2:
                raise KeyboardInterrupt

        kwargs["after_attach"] = bomb
        return original(*args, **kwargs)

    monkeypatch.setattr(cli_mod.partition_mod, "build_tree", interrupting)
    with pytest.raises(KeyboardInterrupt):
        main(["partition", "--config", config, "--run-dir", run_dir, "--run-id", "res"])
    monkeypatch.undo()

    checkpoint = json.loads((tmp_path / "runs" / "res" / "tree.json").read_text())
    assert checkpoint["build_state"]["status"] == "in_progress"

    assert main(["resume", "--run-dir", run_dir]) == 0
    finished = json.loads((tmp_path / "runs" / "res" / "tree.json").read_text())
    assert finished["build_state"]["status"] == "complete"
    assert len(finished["nodes"]) == 13


def test_commands_without_manifest_fail_cleanly(tmp_path, capsys):
    code = main(["synthesize", "--run-dir", str(tmp_path / "nowhere")])
    assert code == 1
    assert "no manifest" in capsys.readouterr().err

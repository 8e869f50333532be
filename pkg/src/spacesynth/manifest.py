"""Run manifest: the one document every artifact of a run hangs off.

Stage commands update their status, artifact paths, and provider-usage totals
here. Timings and usage live only in the manifest so the data and report
files themselves stay byte-stable across reruns.
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

MANIFEST_NAME = "manifest.json"

# Files a run may produce that are not registered artifacts.
_UNTRACKED = {MANIFEST_NAME, "transcripts.ndjson"}


class RunManifest:
    def __init__(self, path: Path, data: dict):
        self.path = Path(path)
        self.data = data

    @classmethod
    def create(cls, run_dir: str | Path, run_id: str, config_snapshot: dict) -> "RunManifest":
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        data = {
            "run_id": run_id,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "config": config_snapshot,
            "stages": {},
            "artifacts": {},
            "provider_usage": {
                "generate_calls": 0,
                "embed_calls": 0,
                "prompt_tokens": 0,
                "completion_tokens": 0,
            },
        }
        manifest = cls(run_dir / MANIFEST_NAME, data)
        manifest.save()
        return manifest

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_NAME
        with open(path, encoding="utf-8") as fh:
            return cls(path, json.load(fh))

    @classmethod
    def exists(cls, run_dir: str | Path) -> bool:
        return (Path(run_dir) / MANIFEST_NAME).is_file()

    def save(self) -> None:
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.data, ensure_ascii=False, indent=2) + "\n")
        os.replace(tmp, self.path)

    # -- updates ---------------------------------------------------------------

    def update_stage(self, stage: str, **fields) -> None:
        entry = self.data["stages"].setdefault(stage, {})
        entry.update(fields)
        self.save()

    def register_artifact(self, name: str, path: str | Path) -> None:
        relative = os.path.relpath(Path(path), self.path.parent)
        self.data["artifacts"][name] = relative
        self.save()

    def add_usage(self, usage: dict) -> None:
        totals = self.data["provider_usage"]
        for key, value in usage.items():
            totals[key] = totals.get(key, 0) + value
        self.save()

    # -- queries ---------------------------------------------------------------

    def artifact_path(self, name: str) -> Path | None:
        relative = self.data["artifacts"].get(name)
        if relative is None:
            return None
        return self.path.parent / relative

    def orphans(self) -> list[str]:
        """Files in the run directory that no manifest entry accounts for."""
        run_dir = self.path.parent
        tracked = {
            os.path.normpath(rel) for rel in self.data["artifacts"].values()
        }
        loose = []
        for path in sorted(run_dir.rglob("*")):
            if not path.is_file():
                continue
            rel = os.path.normpath(path.relative_to(run_dir).as_posix())
            if rel in tracked or rel in _UNTRACKED:
                continue
            loose.append(rel)
        return loose


__all__ = ["RunManifest", "MANIFEST_NAME"]

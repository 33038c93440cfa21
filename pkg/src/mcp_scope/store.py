"""Append-only run store: one locked directory per pipeline run.

Layout: <root>/runs/<timestamp>-<config digest>/ holding the JSONL/CSV
artifacts plus a manifest that records every artifact's content digest,
stage durations, and coverage counters. Completed runs are immutable; any
derived table names the digests of the artifacts it was computed from.
"""

from __future__ import annotations

import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
LOCK = ".lock"


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


class StoreError(Exception):
    pass


class Run:
    """One in-progress run directory; call finalize() exactly once."""

    def __init__(self, path: Path, config_snapshot: dict):
        self.path = path
        self.manifest = {
            "created": datetime.now(timezone.utc).isoformat(),
            "config": config_snapshot,
            "stages": {},
            "artifacts": {},
            "coverage": {},
        }
        self._lock = self.path / LOCK
        try:
            self._lock.touch(exist_ok=False)
        except FileExistsError as exc:
            raise StoreError(f"run directory {path} is locked by another run") from exc

    def artifact_path(self, filename: str) -> Path:
        p = self.path / filename
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add_artifact(self, name: str, filename: str) -> None:
        p = self.path / filename
        if not p.exists():
            raise StoreError(f"artifact file missing: {p}")
        self.manifest["artifacts"][name] = {
            "path": filename,
            "sha256": sha256_file(p),
            "bytes": p.stat().st_size,
        }

    def record_stage(self, name: str, seconds: float, **info) -> None:
        self.manifest["stages"][name] = {"seconds": round(seconds, 3), **info}

    def finalize(self) -> dict:
        (self.path / MANIFEST).write_text(
            json.dumps(self.manifest, indent=2, sort_keys=True), encoding="utf-8"
        )
        self._lock.unlink(missing_ok=True)
        return self.manifest


class RunStore:
    def __init__(self, root):
        self.root = Path(root)

    def create_run(self, config_snapshot: dict) -> Run:
        digest = hashlib.sha256(
            json.dumps(config_snapshot, sort_keys=True, default=str).encode()
        ).hexdigest()[:8]
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
        path = self.root / "runs" / f"{stamp}-{digest}"
        path.mkdir(parents=True, exist_ok=False)
        return Run(path, config_snapshot)

    def runs(self) -> list[Path]:
        base = self.root / "runs"
        if not base.exists():
            return []
        return sorted(p for p in base.iterdir() if p.is_dir())

    def latest(self) -> Path | None:
        all_runs = self.runs()
        return all_runs[-1] if all_runs else None


def load_manifest(run_dir) -> dict:
    p = Path(run_dir) / MANIFEST
    if not p.exists():
        raise StoreError(f"no manifest in {run_dir}")
    return json.loads(p.read_text(encoding="utf-8"))


def artifact_file(run_dir, manifest: dict, name: str) -> Path:
    entry = manifest["artifacts"].get(name)
    if entry is None:
        raise StoreError(f"artifact {name!r} not in manifest")
    return Path(run_dir) / entry["path"]

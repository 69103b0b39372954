"""Timestamped run workspaces: plans, program revisions, logs, outputs, reports.

Each run owns one directory named ``run-<UTC timestamp>-<short id>`` with a
fixed layout and an append-only ``manifest.json`` recording, per phase, the
SHA-256 and size of every snapshot artifact. Finalize re-verifies every
checksum so a mutated artifact cannot slip into the provenance record.
"""

from __future__ import annotations

import hashlib
import json
import os
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import ChecksumMismatch

SUBDIRS = ("plan", "programs", "logs", "outputs", "duni", "report")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class ArtifactRecord:
    path: str  # relative to the workspace root
    sha256: str
    bytes: int

    def to_dict(self) -> dict:
        return {"path": self.path, "sha256": self.sha256, "bytes": self.bytes}


@dataclass
class PhaseRecord:
    name: str
    artifacts: list[ArtifactRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "artifacts": [a.to_dict() for a in self.artifacts]}


@dataclass
class Workspace:
    root: Path
    query: str
    config: dict
    kb_version: int
    created_utc: str
    phases: list[PhaseRecord] = field(default_factory=list)
    finalized: bool = False

    def __post_init__(self):
        self._lock = threading.Lock()

    def dir(self, name: str) -> Path:
        return self.root / name

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def manifest_dict(self) -> dict:
        return {
            "query": self.query,
            "config": self.config,
            "kb_version": self.kb_version,
            "created_utc": self.created_utc,
            "finalized": self.finalized,
            "phases": [p.to_dict() for p in self.phases],
        }

    def _write_manifest(self) -> None:
        text = json.dumps(self.manifest_dict(), sort_keys=True, indent=2) + "\n"
        tmp = self.manifest_path.with_suffix(".json.tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, self.manifest_path)

    def indexed(self) -> dict[str, ArtifactRecord]:
        out: dict[str, ArtifactRecord] = {}
        for phase in self.phases:
            for rec in phase.artifacts:
                out[rec.path] = rec
        return out


def open_workspace(
    base_dir: Path | str, query: str, config: dict, kb_version: int
) -> Workspace:
    base = Path(base_dir).resolve()
    base.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    short = secrets.token_hex(3)
    root = base / f"run-{stamp}-{short}"
    root.mkdir(parents=True, exist_ok=False)
    for sub in SUBDIRS:
        (root / sub).mkdir()
    ws = Workspace(
        root=root,
        query=query,
        config=dict(config),
        kb_version=kb_version,
        created_utc=datetime.now(timezone.utc).isoformat(),
    )
    ws._write_manifest()
    return ws


def snapshot(ws: Workspace, phase: str, artifacts: list[Path | str]) -> PhaseRecord:
    """Record artifacts (hash + size) under a named phase; append-only."""
    records = []
    with ws._lock:
        if ws.finalized:
            raise ValueError("workspace already finalized")
        for art in artifacts:
            p = Path(art)
            if not p.is_absolute():
                p = ws.root / p
            if not p.is_file():
                raise FileNotFoundError(f"snapshot artifact missing: {p}")
            rel = str(p.relative_to(ws.root))
            records.append(ArtifactRecord(rel, sha256_file(p), p.stat().st_size))
        rec = PhaseRecord(phase, records)
        ws.phases.append(rec)
        ws._write_manifest()
    return rec


def verify(ws: Workspace) -> None:
    """Check every indexed artifact still exists and matches its checksum."""
    for rel, rec in sorted(ws.indexed().items()):
        p = ws.root / rel
        if not p.is_file():
            raise ChecksumMismatch(f"indexed artifact missing: {rel}")
        actual = sha256_file(p)
        if actual != rec.sha256:
            raise ChecksumMismatch(f"artifact mutated after snapshot: {rel}")


def finalize(ws: Workspace, report: Path | str | None = None) -> dict:
    """Verify all snapshots, optionally snapshot the final report, and seal.

    Idempotent: re-finalizing an unchanged workspace returns the same
    manifest; re-finalizing after an indexed artifact changed raises
    :class:`ChecksumMismatch`.
    """
    verify(ws)
    if report is not None:
        rel = str(Path(report).relative_to(ws.root)) if Path(report).is_absolute() else str(report)
        if rel not in ws.indexed():
            snapshot(ws, "report", [report])
    with ws._lock:
        ws.finalized = True
        ws._write_manifest()
    return ws.manifest_dict()


def load_manifest(root: Path | str) -> dict:
    return json.loads((Path(root) / "manifest.json").read_text(encoding="utf-8"))


def provenance_closure_ok(root: Path | str) -> tuple[bool, list[str]]:
    """Check every manifest artifact exists with a matching SHA-256."""
    root = Path(root)
    manifest = load_manifest(root)
    problems = []
    for phase in manifest.get("phases", []):
        for rec in phase.get("artifacts", []):
            p = root / rec["path"]
            if not p.is_file():
                problems.append(f"missing: {rec['path']}")
            elif sha256_file(p) != rec["sha256"]:
                problems.append(f"hash mismatch: {rec['path']}")
    return (not problems, problems)

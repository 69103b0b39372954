"""Data access agent: directory exploration, type recognition, and descriptor
synthesis through a bounded execute/reflect loop.

Exploration scripts are standalone programs run in the sandbox; a validated
script is kept in a reusable library keyed by file kind, and every attempt
(including failures) is recorded for audit.
"""

from __future__ import annotations

import json
import re
import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import textutil as tu
from .backends import BackendRequest, PlannerBackend, Role
from .errors import BudgetExhausted, RootMissing, UnreadableFile
from .knowledge_base import (
    DataUnit,
    DatasetDescription,
    DatasetEntry,
    FieldSpec,
    KnowledgeBase,
    Modality,
    Provenance,
    QualityReport,
    SpatioTemporalIndex,
    TemporalCandidate,
    UnitDescriptor,
)
from .sandbox import Sandbox, SandboxSpec

DEFAULT_REFLECTION_BUDGET = 5
SNIFF_BYTES = 4096

EXTENSION_KINDS = {
    "pkl": "tensor", "npy": "tensor", "pt": "tensor",
    "csv": "table", "xlsx": "table", "tsv": "table",
    "json": "sequence", "fasta": "sequence",
    "txt": "text", "md": "text",
}

KIND_TO_MODALITY = {
    "table": Modality.TABULAR,
    "tensor": Modality.TENSOR,
    "sequence": Modality.SEQUENCE,
    "text": Modality.TEXT,
}


class ScriptStatus(str, Enum):
    CANDIDATE = "candidate"
    VALIDATED = "validated"
    FAILED = "failed"


@dataclass
class AttemptRecord:
    revision_id: str
    exit_code: int
    stderr_excerpt: str

    def to_dict(self) -> dict:
        return {
            "revision_id": self.revision_id,
            "exit_code": self.exit_code,
            "stderr_excerpt": self.stderr_excerpt,
        }


@dataclass
class ExplorationScript:
    id: str
    target_kind: str
    body: str
    status: ScriptStatus = ScriptStatus.CANDIDATE
    attempts: list[AttemptRecord] = field(default_factory=list)
    sequence: int = 0  # library insertion order; recency for reuse

    def validate(self) -> None:
        if self.status is ScriptStatus.VALIDATED:
            if not self.attempts or self.attempts[-1].exit_code != 0:
                raise ValueError("validated script requires a final attempt with exit code 0")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "target_kind": self.target_kind,
            "body": self.body,
            "status": self.status.value,
            "attempts": [a.to_dict() for a in self.attempts],
            "sequence": self.sequence,
        }


@dataclass
class InventoryEntry:
    relative_path: str
    size: int
    extension: str
    detected_kind: str

    def to_dict(self) -> dict:
        return {
            "relative_path": self.relative_path,
            "size": self.size,
            "extension": self.extension,
            "detected_kind": self.detected_kind,
        }


@dataclass
class FileInventory:
    root: str
    entries: list[InventoryEntry] = field(default_factory=list)
    directory_patterns: list[str] = field(default_factory=list)
    access_errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "entries": [e.to_dict() for e in self.entries],
            "directory_patterns": list(self.directory_patterns),
            "access_errors": list(self.access_errors),
        }


# --- recognition --------------------------------------------------------

_NPY_MAGIC = b"\x93NUMPY"
_PICKLE_MAGIC = b"\x80"


def _csv_like(text: str) -> bool:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        return False
    for delim in (",", "\t", ";", "|"):
        counts = [ln.count(delim) for ln in lines[:10]]
        if counts[0] >= 1 and min(counts) == max(counts):
            return True
    return False


def recognize_type(path: str | Path, content_prefix: bytes = b"") -> str:
    """Deterministic kind detection: extension table first, then magic bytes,
    then structural sniffing of the prefix; 'unknown' is a valid answer."""
    ext = Path(path).suffix.lstrip(".").lower()
    if ext in EXTENSION_KINDS:
        return EXTENSION_KINDS[ext]
    if not content_prefix:
        return "unknown"
    if content_prefix.startswith(_NPY_MAGIC) or content_prefix.startswith(_PICKLE_MAGIC):
        return "tensor"
    text = content_prefix.decode("utf-8", errors="replace")
    stripped = text.lstrip()
    if stripped.startswith(">"):
        return "sequence"
    if stripped.startswith("{") or stripped.startswith("["):
        return "sequence"
    if _csv_like(text):
        return "table"
    printable = sum(1 for ch in text if ch.isprintable() or ch in "\n\r\t")
    if text and printable / len(text) > 0.95:
        return "text"
    return "unknown"


def scan_tree(root: str | Path) -> FileInventory:
    """Recursive inventory of regular files; symlinks and hidden files skipped."""
    root = Path(root)
    if not root.is_dir():
        raise RootMissing(f"dataset root does not exist: {root}")
    root = root.resolve()
    inv = FileInventory(root=str(root))

    def walk(d: Path) -> None:
        try:
            children = sorted(d.iterdir(), key=lambda p: p.name)
        except OSError as exc:
            inv.access_errors.append(f"{d}: {exc}")
            return
        for child in children:
            if child.name.startswith("."):
                continue
            if child.is_symlink():
                continue
            if child.is_dir():
                walk(child)
            elif child.is_file():
                try:
                    size = child.stat().st_size
                    with open(child, "rb") as fh:
                        prefix = fh.read(SNIFF_BYTES)
                except OSError as exc:
                    inv.access_errors.append(f"{child}: {exc}")
                    continue
                rel = child.relative_to(root).as_posix()
                inv.entries.append(InventoryEntry(
                    relative_path=rel,
                    size=size,
                    extension=child.suffix.lstrip(".").lower(),
                    detected_kind=recognize_type(child, prefix),
                ))

    walk(root)
    inv.entries.sort(key=lambda e: e.relative_path)

    groups: dict[tuple[str, str], int] = {}
    for e in inv.entries:
        parent = str(Path(e.relative_path).parent)
        parent = "" if parent == "." else parent
        groups[(parent, e.extension)] = groups.get((parent, e.extension), 0) + 1
    inv.directory_patterns = [
        (f"{parent}/*.{ext}" if parent else f"*.{ext}") + f" ({n} files)"
        for (parent, ext), n in sorted(groups.items())
    ]
    return inv


# --- script library -------------------------------------------------------


class ScriptLibrary:
    """Validated exploration scripts, optionally persisted under a directory."""

    def __init__(self, root: Path | str | None = None):
        self.root = Path(root) if root else None
        self.scripts: list[ExplorationScript] = []
        self._seq = 0
        if self.root and self.root.is_dir():
            for path in sorted(self.root.glob("*.json")):
                doc = json.loads(path.read_text(encoding="utf-8"))
                script = ExplorationScript(
                    id=doc["id"],
                    target_kind=doc["target_kind"],
                    body=doc["body"],
                    status=ScriptStatus(doc["status"]),
                    attempts=[AttemptRecord(**a) for a in doc.get("attempts", [])],
                    sequence=doc.get("sequence", 0),
                )
                self.scripts.append(script)
                self._seq = max(self._seq, script.sequence)

    def next_sequence(self) -> int:
        self._seq += 1
        return self._seq

    def add(self, script: ExplorationScript) -> None:
        script.sequence = self.next_sequence()
        self.scripts.append(script)
        if self.root:
            self.root.mkdir(parents=True, exist_ok=True)
            path = self.root / f"{script.id}.json"
            path.write_text(
                json.dumps(script.to_dict(), sort_keys=True, indent=2) + "\n",
                encoding="utf-8",
            )


def reuse_script(kind: str, library: list[ExplorationScript]) -> ExplorationScript | None:
    """Most recently validated script for this kind, else None (synthesize)."""
    validated = [s for s in library if s.status is ScriptStatus.VALIDATED and s.target_kind == kind]
    if not validated:
        return None
    return max(validated, key=lambda s: s.sequence)


# --- descriptor construction ----------------------------------------------

def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def _validate_descriptor_doc(doc: dict) -> None:
    if not isinstance(doc, dict):
        raise ValueError("descriptor document must be a JSON object")
    for key in ("fields", "row_count", "sample_rows"):
        if key not in doc:
            raise ValueError(f"descriptor document missing {key!r}")
    if not isinstance(doc["fields"], list):
        raise ValueError("fields must be a list")
    for f in doc["fields"]:
        if "name" not in f or "type" not in f or "missing_frac" not in f:
            raise ValueError(f"field entry incomplete: {f}")


def _detect_spatiotemporal(fields: list[str], sample_rows: list[list]) -> SpatioTemporalIndex | None:
    time_fields: list[str] = []
    grans: list[str] = []
    for name in fields:
        g = tu.field_granularity(name)
        if g:
            time_fields.append(name)
            grans.append(g)
    # value-based fallback: a column of ISO timestamps
    if not time_fields and sample_rows:
        for i, name in enumerate(fields):
            vals = [str(r[i]) for r in sample_rows if i < len(r)]
            if vals and all(tu.looks_like_timestamp(v) for v in vals):
                time_fields.append(name)
                grans.append("daily" if all(len(v.strip()) <= 10 for v in vals) else "hourly")
                break
    space_fields = [n for n in fields if n.strip().lower() in tu.SPACE_FIELD_LEXICON]
    if not time_fields and not space_fields:
        return None
    return SpatioTemporalIndex(
        time_field="+".join(time_fields) if time_fields else None,
        space_fields=space_fields,
        granularity=tu.finest_granularity(grans),
    )


def descriptor_from_doc(
    doc: dict, modality: Modality, source_path: str, script_id: str
) -> UnitDescriptor:
    schema = [FieldSpec(f["name"], f["type"]) for f in doc["fields"]]
    missingness = {f["name"]: float(f["missing_frac"]) for f in doc["fields"]}
    value_ranges = {
        f["name"]: [float(f["min"]), float(f["max"])]
        for f in doc["fields"]
        if "min" in f and "max" in f
    }
    summary_stats = {}
    for f in doc["fields"]:
        stats = {}
        for key in ("min", "max", "mean", "cardinality"):
            if key in f:
                stats[key] = f[key]
        if stats:
            summary_stats[f["name"]] = stats
    desc = UnitDescriptor(
        modality=modality,
        structural_schema=schema,
        spatiotemporal_index=_detect_spatiotemporal(
            [f["name"] for f in doc["fields"]], doc.get("sample_rows", [])
        ),
        provenance=Provenance(source_path=source_path, generator_script=script_id),
        quality=QualityReport(
            missingness=missingness,
            row_count=int(doc["row_count"]),
            value_ranges=value_ranges,
        ),
        summary_stats=summary_stats,
        sample_rows=[list(r) for r in doc.get("sample_rows", [])[:5]],
    )
    desc.validate()
    return desc


def summarize_unit(
    entry: InventoryEntry,
    root: str | Path,
    backend: PlannerBackend,
    budget: int,
    sandbox: Sandbox,
    library: ScriptLibrary,
    unit_id: str | None = None,
) -> tuple[DataUnit, ExplorationScript]:
    """Summarize one file through the execute/reflect loop.

    Reuses the newest validated script for the kind when one exists; otherwise
    asks the backend for one. Each failed run feeds its stderr back into the
    next synthesis request. Raises :class:`BudgetExhausted` with the full
    attempt trace when the budget runs out.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    root = Path(root).resolve()
    abs_path = root / entry.relative_path
    try:
        with open(abs_path, "rb") as fh:
            prefix = fh.read(SNIFF_BYTES)
    except OSError as exc:
        raise UnreadableFile(f"cannot read {abs_path}: {exc}") from exc

    kind = entry.detected_kind
    base_id = unit_id or f"unit-{_slug(entry.relative_path)}"
    reused = reuse_script(kind, library.scripts)
    if reused is not None:
        script = ExplorationScript(
            id=f"script-{_slug(entry.relative_path)}",
            target_kind=kind,
            body=reused.body,
            status=ScriptStatus.CANDIDATE,
        )
    else:
        resp = backend.complete(BackendRequest(
            role=Role.SCRIPT_SYNTHESIS,
            context={
                "kind": kind,
                "path": entry.relative_path,
                "prefix_excerpt": prefix[:400].decode("utf-8", errors="replace"),
            },
        ))
        script = ExplorationScript(
            id=f"script-{_slug(entry.relative_path)}",
            target_kind=kind,
            body=resp.payload.get("script", ""),
        )

    for attempt in range(1, budget + 1):
        revision = f"{script.id}.r{attempt}"
        workdir = sandbox.fresh_workdir(name=f"explore-{_slug(entry.relative_path)}")
        script_path = workdir / "explore.py"
        script_path.write_text(script.body, encoding="utf-8")
        res = sandbox.run(SandboxSpec(
            command=[sys.executable, str(script_path), str(abs_path)],
            workdir=workdir,
            timeout_s=60.0,
            label=f"explore:{entry.relative_path}",
        ))
        failure = ""
        doc = None
        if res.exit_code == 0:
            try:
                doc = json.loads(res.stdout)
                _validate_descriptor_doc(doc)
            except (json.JSONDecodeError, ValueError) as exc:
                failure = f"descriptor document invalid: {exc}"
                doc = None
        else:
            failure = res.failure_excerpt()
        script.attempts.append(AttemptRecord(
            revision_id=revision,
            exit_code=res.exit_code if not (res.exit_code == 0 and failure) else 1,
            stderr_excerpt=failure[:2000],
        ))
        if doc is not None:
            script.status = ScriptStatus.VALIDATED
            script.validate()
            library.add(script)
            unit = DataUnit(
                id=base_id,
                path=str(abs_path),
                descriptor=descriptor_from_doc(
                    doc, KIND_TO_MODALITY.get(kind, Modality.OTHER), str(abs_path), script.id
                ),
                target_object=_slug(Path(entry.relative_path).stem).replace("-", " "),
            )
            unit.validate()
            return unit, script
        if attempt < budget:
            resp = backend.complete(BackendRequest(
                role=Role.SCRIPT_SYNTHESIS,
                context={
                    "kind": kind,
                    "path": entry.relative_path,
                    "error": failure[:2000],
                },
                attempt=attempt + 1,
            ))
            new_body = resp.payload.get("script", "")
            if new_body:
                script.body = new_body

    script.status = ScriptStatus.FAILED
    raise BudgetExhausted(
        f"exploration of {entry.relative_path} failed after {budget} attempt(s)",
        attempts=[a.to_dict() for a in script.attempts],
    )


# --- dataset-level description ---------------------------------------------

_COMPOSITE_DATE = ({"year", "month", "day"}, {"year", "month"}, {"year", "doy"})


def synthesize_dataset_description(
    units: list[DataUnit], inventory: FileInventory
) -> DatasetDescription:
    """Fold unit descriptors + the inventory into one dataset-level record."""
    if not units:
        raise ValueError("units must be non-empty")
    modality_inventory: dict[str, int] = {}
    field_org: dict[str, list[str]] = {}
    temporal: list[TemporalCandidate] = []
    spatial: list[str] = []
    for u in units:
        m = u.descriptor.modality.value
        modality_inventory[m] = modality_inventory.get(m, 0) + 1
        names = u.descriptor.field_names()
        field_org[u.id] = names
        lower = {n.lower(): n for n in names}
        composite_hit = None
        for combo in _COMPOSITE_DATE:
            if combo <= set(lower):
                composite_hit = [lower[c] for c in sorted(combo, key=list(lower).index)]
                break
        if composite_hit:
            hour = [lower[n] for n in lower if tu.field_granularity(n) == "hourly"]
            temporal.append(TemporalCandidate(
                unit_id=u.id,
                fields=composite_hit + hour,
                granularity="hourly" if hour else "daily",
            ))
        elif u.descriptor.spatiotemporal_index and u.descriptor.spatiotemporal_index.time_field:
            sti = u.descriptor.spatiotemporal_index
            temporal.append(TemporalCandidate(
                unit_id=u.id,
                fields=sti.time_field.split("+"),
                granularity=sti.granularity,
            ))
        for n in names:
            if n.strip().lower() in tu.SPACE_FIELD_LEXICON and n not in spatial:
                spatial.append(n)

    dirs: set[str] = set()
    for e in inventory.entries:
        for part in Path(e.relative_path).parts[:-1]:
            dirs.add(part.lower())
    splits = sorted(dirs & tu.SPLIT_DIR_LEXICON)

    cues: list[str] = []
    for e in inventory.entries:
        for token in re.split(r"[/_\-.]", Path(e.relative_path).with_suffix("").as_posix()):
            t = token.lower()
            if t and not t.isdigit() and t not in cues:
                cues.append(t)

    return DatasetDescription(
        modality_inventory=modality_inventory,
        field_organization=field_org,
        temporal_index_candidates=temporal,
        spatial_index_candidates=spatial,
        split_candidates=splits,
        semantic_cues=sorted(cues),
    )


# --- end-to-end KB construction ---------------------------------------------

@dataclass
class UnitFailure:
    relative_path: str
    error: str
    attempts: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "relative_path": self.relative_path,
            "error": self.error,
            "attempts": self.attempts,
        }


@dataclass
class BuildReport:
    dataset_id: str
    version: int
    unit_ids: list[str] = field(default_factory=list)
    failures: list[UnitFailure] = field(default_factory=list)
    skipped_unknown: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "version": self.version,
            "unit_ids": list(self.unit_ids),
            "failures": [f.to_dict() for f in self.failures],
            "skipped_unknown": list(self.skipped_unknown),
            "warnings": list(self.warnings),
        }


def dataset_id_for_root(root: str | Path) -> str:
    return f"ds-{_slug(Path(root).resolve().name)}"


def build_knowledge_base(
    query: str,
    root: str | Path,
    kb: KnowledgeBase,
    backend: PlannerBackend,
    budget: int = DEFAULT_REFLECTION_BUDGET,
    sandbox: Sandbox | None = None,
    library: ScriptLibrary | None = None,
    dataset_id: str | None = None,
    trace_dir: Path | str | None = None,
) -> BuildReport:
    """Scan -> recognize -> summarize -> describe -> register, best effort.

    Per-unit failures are collected into the report instead of aborting the
    whole build; attempt traces are persisted when ``trace_dir`` is given.
    """
    root = Path(root).resolve()
    inventory = scan_tree(root)
    sandbox = sandbox or Sandbox(root.parent / ".sciforge-sandbox")
    library = library or ScriptLibrary()
    ds_id = dataset_id or dataset_id_for_root(root)

    units: list[DataUnit] = []
    failures: list[UnitFailure] = []
    skipped: list[str] = []
    for entry in inventory.entries:
        if entry.detected_kind == "unknown":
            skipped.append(entry.relative_path)
            continue
        try:
            unit, script = summarize_unit(
                entry, root, backend, budget, sandbox, library,
                unit_id=f"{ds_id}-{_slug(entry.relative_path)}",
            )
            units.append(unit)
            trace = script.to_dict()
        except BudgetExhausted as exc:
            failures.append(UnitFailure(entry.relative_path, str(exc), exc.attempts))
            trace = {"error": str(exc), "attempts": exc.attempts}
        except UnreadableFile as exc:
            failures.append(UnitFailure(entry.relative_path, str(exc)))
            trace = {"error": str(exc)}
        if trace_dir is not None:
            td = Path(trace_dir)
            td.mkdir(parents=True, exist_ok=True)
            (td / f"{_slug(entry.relative_path)}.trace.json").write_text(
                json.dumps(trace, sort_keys=True, indent=2) + "\n", encoding="utf-8"
            )

    report = BuildReport(dataset_id=ds_id, version=kb.version)
    report.failures = failures
    report.skipped_unknown = skipped
    if not units:
        report.warnings.append(f"no usable data units found under {root}")
    description = (
        synthesize_dataset_description(units, inventory) if units else DatasetDescription()
    )
    entry = DatasetEntry(id=ds_id, units=units, description=description)
    report.version = kb.register_dataset(entry)
    report.unit_ids = [u.id for u in units]
    return report

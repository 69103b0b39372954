"""Scientific data knowledge base: data lake, tool lake, case lake.

The three lakes hold normalized descriptors for datasets (atomic data units),
executable tools (with input/output contracts), and reusable cases
(problem -> per-unit pipelines + integration strategy). A store directory
persists one JSON document per entity plus a checksummed index manifest.
"""

from __future__ import annotations

import copy
import hashlib
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import (
    AtomicityViolation,
    CorruptStore,
    DanglingToolRef,
    DuplicateId,
)

STORE_SCHEMA_VERSION = 1

CAPABILITY_TAGS = frozenset(
    {"align_temporal", "map_schema", "join", "aggregate", "clean", "split", "encode"}
)


class Modality(str, Enum):
    TABULAR = "tabular"
    TENSOR = "tensor"
    SEQUENCE = "sequence"
    TEXT = "text"
    TIMESERIES = "timeseries"
    OTHER = "other"


class StructureKind(str, Enum):
    TABULAR = "tabular"
    GRAPH = "graph"
    TENSOR = "tensor"


# --- unit descriptors -------------------------------------------------------

@dataclass
class FieldSpec:
    name: str
    field_type: str
    unit_of_measure: str | None = None

    def to_dict(self) -> dict:
        d = {"name": self.name, "field_type": self.field_type}
        if self.unit_of_measure is not None:
            d["unit_of_measure"] = self.unit_of_measure
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FieldSpec":
        return cls(d["name"], d["field_type"], d.get("unit_of_measure"))


@dataclass
class SpatioTemporalIndex:
    time_field: str | None = None
    space_fields: list[str] = field(default_factory=list)
    granularity: str | None = None

    def to_dict(self) -> dict:
        return {
            "time_field": self.time_field,
            "space_fields": list(self.space_fields),
            "granularity": self.granularity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpatioTemporalIndex":
        return cls(d.get("time_field"), list(d.get("space_fields", [])), d.get("granularity"))


@dataclass
class Provenance:
    source_path: str
    generator_script: str | None = None

    def to_dict(self) -> dict:
        return {"source_path": self.source_path, "generator_script": self.generator_script}

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        return cls(d["source_path"], d.get("generator_script"))


@dataclass
class QualityReport:
    missingness: dict[str, float] = field(default_factory=dict)
    row_count: int = 0
    value_ranges: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "missingness": dict(self.missingness),
            "row_count": self.row_count,
            "value_ranges": {k: list(v) for k, v in self.value_ranges.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QualityReport":
        return cls(
            dict(d.get("missingness", {})),
            int(d.get("row_count", 0)),
            {k: list(v) for k, v in d.get("value_ranges", {}).items()},
        )


@dataclass
class UnitDescriptor:
    """Machine-readable summary of a single data unit."""

    modality: Modality
    structural_schema: list[FieldSpec] = field(default_factory=list)
    spatiotemporal_index: SpatioTemporalIndex | None = None
    provenance: Provenance = field(default_factory=lambda: Provenance(""))
    quality: QualityReport = field(default_factory=QualityReport)
    summary_stats: dict[str, dict] = field(default_factory=dict)
    sample_rows: list[list] = field(default_factory=list)

    def field_names(self) -> list[str]:
        return [f.name for f in self.structural_schema]

    def validate(self) -> None:
        names = set(self.field_names())
        for fname, frac in self.quality.missingness.items():
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"missingness for {fname!r} out of [0,1]: {frac}")
        if self.quality.row_count < 0:
            raise ValueError("row_count must be >= 0")
        for fname in self.summary_stats:
            if fname not in names:
                raise ValueError(f"summary_stats field {fname!r} not in structural_schema")
        if len(self.sample_rows) > 5:
            raise ValueError("at most 5 sample rows allowed")
        for row in self.sample_rows:
            if len(row) != len(self.structural_schema):
                raise ValueError("sample row does not conform to schema field order")

    def to_dict(self) -> dict:
        return {
            "modality": self.modality.value,
            "structural_schema": [f.to_dict() for f in self.structural_schema],
            "spatiotemporal_index": (
                self.spatiotemporal_index.to_dict() if self.spatiotemporal_index else None
            ),
            "provenance": self.provenance.to_dict(),
            "quality": self.quality.to_dict(),
            "summary_stats": {k: dict(v) for k, v in self.summary_stats.items()},
            "sample_rows": [list(r) for r in self.sample_rows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UnitDescriptor":
        sti = d.get("spatiotemporal_index")
        return cls(
            modality=Modality(d["modality"]),
            structural_schema=[FieldSpec.from_dict(f) for f in d.get("structural_schema", [])],
            spatiotemporal_index=SpatioTemporalIndex.from_dict(sti) if sti else None,
            provenance=Provenance.from_dict(d["provenance"]),
            quality=QualityReport.from_dict(d.get("quality", {})),
            summary_stats={k: dict(v) for k, v in d.get("summary_stats", {}).items()},
            sample_rows=[list(r) for r in d.get("sample_rows", [])],
        )


@dataclass
class DataUnit:
    """Atomic single-modality asset plus its descriptor."""

    id: str
    path: str
    descriptor: UnitDescriptor
    target_object: str = ""

    def validate(self) -> None:
        if not self.id:
            raise ValueError("unit id must be non-empty")
        self.descriptor.validate()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "path": self.path,
            "descriptor": self.descriptor.to_dict(),
            "target_object": self.target_object,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataUnit":
        return cls(d["id"], d["path"], UnitDescriptor.from_dict(d["descriptor"]), d.get("target_object", ""))


@dataclass
class TemporalCandidate:
    unit_id: str
    fields: list[str]
    granularity: str | None = None

    def to_dict(self) -> dict:
        return {"unit_id": self.unit_id, "fields": list(self.fields), "granularity": self.granularity}

    @classmethod
    def from_dict(cls, d: dict) -> "TemporalCandidate":
        return cls(d["unit_id"], list(d["fields"]), d.get("granularity"))


@dataclass
class DatasetDescription:
    """Dataset-level descriptor: modality inventory, field layout, index/split candidates."""

    modality_inventory: dict[str, int] = field(default_factory=dict)
    field_organization: dict[str, list[str]] = field(default_factory=dict)
    temporal_index_candidates: list[TemporalCandidate] = field(default_factory=list)
    spatial_index_candidates: list[str] = field(default_factory=list)
    split_candidates: list[str] = field(default_factory=list)
    semantic_cues: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "modality_inventory": dict(self.modality_inventory),
            "field_organization": {k: list(v) for k, v in self.field_organization.items()},
            "temporal_index_candidates": [c.to_dict() for c in self.temporal_index_candidates],
            "spatial_index_candidates": list(self.spatial_index_candidates),
            "split_candidates": list(self.split_candidates),
            "semantic_cues": list(self.semantic_cues),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetDescription":
        return cls(
            dict(d.get("modality_inventory", {})),
            {k: list(v) for k, v in d.get("field_organization", {}).items()},
            [TemporalCandidate.from_dict(c) for c in d.get("temporal_index_candidates", [])],
            list(d.get("spatial_index_candidates", [])),
            list(d.get("split_candidates", [])),
            list(d.get("semantic_cues", [])),
        )


@dataclass
class DatasetEntry:
    id: str
    units: list[DataUnit] = field(default_factory=list)
    description: DatasetDescription = field(default_factory=DatasetDescription)

    def validate(self) -> None:
        if not self.id:
            raise ValueError("dataset id must be non-empty")
        seen = set()
        for u in self.units:
            if u.id in seen:
                raise DuplicateId(f"unit id {u.id!r} repeated within dataset {self.id!r}")
            seen.add(u.id)
            u.validate()
        inventory: dict[str, int] = {}
        for u in self.units:
            inventory[u.descriptor.modality.value] = inventory.get(u.descriptor.modality.value, 0) + 1
        if self.units and inventory != self.description.modality_inventory:
            raise ValueError(
                "description modality inventory does not match unit modalities: "
                f"{self.description.modality_inventory} != {inventory}"
            )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "units": [u.to_dict() for u in self.units],
            "description": self.description.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetEntry":
        return cls(
            d["id"],
            [DataUnit.from_dict(u) for u in d.get("units", [])],
            DatasetDescription.from_dict(d.get("description", {})),
        )


# --- tools ------------------------------------------------------------------

@dataclass
class ContractSlot:
    """One input or output slot of a tool: expected modality + schema pattern.

    An empty ``schema_pattern`` accepts any schema of the right modality.
    """

    modality: Modality
    schema_pattern: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"modality": self.modality.value, "schema_pattern": list(self.schema_pattern)}

    @classmethod
    def from_dict(cls, d: dict) -> "ContractSlot":
        return cls(Modality(d["modality"]), list(d.get("schema_pattern", [])))


@dataclass
class ToolDescriptor:
    id: str
    capability: str
    capability_tags: list[str] = field(default_factory=list)
    input_contract: list[ContractSlot] = field(default_factory=list)
    output_contract: list[ContractSlot] = field(default_factory=list)
    dependencies: list[str] = field(default_factory=list)
    timeout_s: float = 60.0
    memory_hint_mb: int | None = None
    applicable_modalities: list[str] = field(default_factory=list)
    command: list[str] = field(default_factory=list)
    protocol: str = "manifest-v1"
    # declared ordering dependencies on other tool ids (used by integration
    # sequencing; empty for almost all tools)
    order_after: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not self.id:
            raise ValueError("tool id must be non-empty")
        if not self.input_contract or not self.output_contract:
            raise ValueError(f"tool {self.id!r}: input and output contracts must be non-empty")
        if self.timeout_s <= 0:
            raise ValueError(f"tool {self.id!r}: timeout must be > 0")
        for tag in self.capability_tags:
            if tag not in CAPABILITY_TAGS:
                raise ValueError(f"tool {self.id!r}: unknown capability tag {tag!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "capability": self.capability,
            "capability_tags": list(self.capability_tags),
            "input_contract": [s.to_dict() for s in self.input_contract],
            "output_contract": [s.to_dict() for s in self.output_contract],
            "dependencies": list(self.dependencies),
            "timeout_s": self.timeout_s,
            "memory_hint_mb": self.memory_hint_mb,
            "applicable_modalities": list(self.applicable_modalities),
            "command": list(self.command),
            "protocol": self.protocol,
            "order_after": list(self.order_after),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToolDescriptor":
        return cls(
            id=d["id"],
            capability=d.get("capability", ""),
            capability_tags=list(d.get("capability_tags", [])),
            input_contract=[ContractSlot.from_dict(s) for s in d.get("input_contract", [])],
            output_contract=[ContractSlot.from_dict(s) for s in d.get("output_contract", [])],
            dependencies=list(d.get("dependencies", [])),
            timeout_s=float(d.get("timeout_s", 60.0)),
            memory_hint_mb=d.get("memory_hint_mb"),
            applicable_modalities=list(d.get("applicable_modalities", [])),
            command=list(d.get("command", [])),
            protocol=d.get("protocol", "manifest-v1"),
            order_after=list(d.get("order_after", [])),
        )


@dataclass
class ToolEntry:
    descriptor: ToolDescriptor
    summary: str | None = None

    def to_dict(self) -> dict:
        return {"descriptor": self.descriptor.to_dict(), "summary": self.summary}

    @classmethod
    def from_dict(cls, d: dict) -> "ToolEntry":
        return cls(ToolDescriptor.from_dict(d["descriptor"]), d.get("summary"))


# --- cases ------------------------------------------------------------------

@dataclass
class UnitArchetype:
    """Pattern a case binding uses to match units in a new data lake."""

    modality: Modality
    required_fields: list[str] = field(default_factory=list)
    object_keyword: str = ""

    def to_dict(self) -> dict:
        return {
            "modality": self.modality.value,
            "required_fields": list(self.required_fields),
            "object_keyword": self.object_keyword,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UnitArchetype":
        return cls(Modality(d["modality"]), list(d.get("required_fields", [])), d.get("object_keyword", ""))


@dataclass
class UnitBinding:
    """Either a concrete unit reference or an archetype, plus its strategy."""

    strategy: str
    tool_ids: list[str] = field(default_factory=list)
    unit_id: str | None = None
    archetype: UnitArchetype | None = None

    def validate(self) -> None:
        if self.unit_id is None and self.archetype is None:
            raise ValueError("binding needs a unit reference or an archetype")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "tool_ids": list(self.tool_ids),
            "unit_id": self.unit_id,
            "archetype": self.archetype.to_dict() if self.archetype else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UnitBinding":
        arch = d.get("archetype")
        return cls(
            d["strategy"],
            list(d.get("tool_ids", [])),
            d.get("unit_id"),
            UnitArchetype.from_dict(arch) if arch else None,
        )


@dataclass
class Case:
    id: str
    description: str
    unit_bindings: list[UnitBinding] = field(default_factory=list)
    integration_description: str = ""
    integration_tools: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not self.id:
            raise ValueError("case id must be non-empty")
        if not self.unit_bindings:
            raise ValueError(f"case {self.id!r}: unit_bindings must be non-empty")
        for b in self.unit_bindings:
            b.validate()

    def referenced_tool_ids(self) -> set[str]:
        refs = set(self.integration_tools)
        for b in self.unit_bindings:
            refs.update(b.tool_ids)
        return refs

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "description": self.description,
            "unit_bindings": [b.to_dict() for b in self.unit_bindings],
            "integration_description": self.integration_description,
            "integration_tools": list(self.integration_tools),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Case":
        return cls(
            d["id"],
            d.get("description", ""),
            [UnitBinding.from_dict(b) for b in d.get("unit_bindings", [])],
            d.get("integration_description", ""),
            list(d.get("integration_tools", [])),
        )


# --- the knowledge base -----------------------------------------------------

@dataclass
class KnowledgeBase:
    """K = {data lake, tool lake, case lake} behind a single-writer lock.

    Mutations serialize behind ``_lock`` and bump ``version``; readers take a
    deep-copied snapshot so values are safe to hand across threads.
    """

    data_lake: list[DatasetEntry] = field(default_factory=list)
    tool_lake: list[ToolEntry] = field(default_factory=list)
    case_lake: list[Case] = field(default_factory=list)
    version: int = 0

    def __post_init__(self):
        self._lock = threading.RLock()

    # equality ignores the lock
    def __eq__(self, other):
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return (
            self.data_lake == other.data_lake
            and self.tool_lake == other.tool_lake
            and self.case_lake == other.case_lake
            and self.version == other.version
        )

    def _all_ids(self) -> set[str]:
        ids = set()
        for ds in self.data_lake:
            ids.add(ds.id)
            ids.update(u.id for u in ds.units)
        ids.update(t.descriptor.id for t in self.tool_lake)
        ids.update(c.id for c in self.case_lake)
        return ids

    def register_dataset(self, entry: DatasetEntry) -> int:
        with self._lock:
            entry.validate()
            existing = self._all_ids()
            if entry.id in existing:
                raise DuplicateId(f"dataset id {entry.id!r} already registered")
            for u in entry.units:
                if u.id in existing:
                    raise DuplicateId(f"unit id {u.id!r} already registered")
            self.data_lake.append(copy.deepcopy(entry))
            self.version += 1
            return self.version

    def remove_dataset(self, dataset_id: str) -> int:
        """Drop a dataset entry (used by rebuild/update flows); bumps version."""
        with self._lock:
            before = len(self.data_lake)
            self.data_lake = [ds for ds in self.data_lake if ds.id != dataset_id]
            if len(self.data_lake) == before:
                raise KeyError(f"no dataset {dataset_id!r}")
            self.version += 1
            return self.version

    def register_tool(self, desc: ToolDescriptor, summary: str | None = None) -> int:
        with self._lock:
            desc.validate()
            if desc.id in self._all_ids():
                raise DuplicateId(f"tool id {desc.id!r} already registered")
            self.tool_lake.append(ToolEntry(copy.deepcopy(desc), summary))
            self.version += 1
            return self.version

    def register_case(self, case: Case) -> int:
        with self._lock:
            case.validate()
            if case.id in self._all_ids():
                raise DuplicateId(f"case id {case.id!r} already registered")
            known_tools = {t.descriptor.id for t in self.tool_lake}
            missing = case.referenced_tool_ids() - known_tools
            if missing:
                raise DanglingToolRef(
                    f"case {case.id!r} references unknown tools: {sorted(missing)}"
                )
            self.case_lake.append(copy.deepcopy(case))
            self.version += 1
            return self.version

    # --- lookups (consistent snapshots) ---

    def snapshot(self) -> "KnowledgeBase":
        with self._lock:
            return KnowledgeBase(
                copy.deepcopy(self.data_lake),
                copy.deepcopy(self.tool_lake),
                copy.deepcopy(self.case_lake),
                self.version,
            )

    def dataset(self, dataset_id: str) -> DatasetEntry | None:
        with self._lock:
            for ds in self.data_lake:
                if ds.id == dataset_id:
                    return copy.deepcopy(ds)
        return None

    def unit(self, unit_id: str) -> DataUnit | None:
        with self._lock:
            for ds in self.data_lake:
                for u in ds.units:
                    if u.id == unit_id:
                        return copy.deepcopy(u)
        return None

    def all_units(self) -> list[DataUnit]:
        with self._lock:
            return [copy.deepcopy(u) for ds in self.data_lake for u in ds.units]

    def tool(self, tool_id: str) -> ToolDescriptor | None:
        with self._lock:
            for t in self.tool_lake:
                if t.descriptor.id == tool_id:
                    return copy.deepcopy(t.descriptor)
        return None

    def case(self, case_id: str) -> Case | None:
        with self._lock:
            for c in self.case_lake:
                if c.id == case_id:
                    return copy.deepcopy(c)
        return None

    def check_integrity(self) -> None:
        """Re-verify referential integrity and unit atomicity over all lakes."""
        with self._lock:
            known_tools = {t.descriptor.id for t in self.tool_lake}
            for c in self.case_lake:
                missing = c.referenced_tool_ids() - known_tools
                if missing:
                    raise DanglingToolRef(
                        f"case {c.id!r} references unknown tools: {sorted(missing)}"
                    )
            for ds in self.data_lake:
                ds.validate()


def reject_multi_modality(declared: list[str]) -> Modality:
    """Resolve a unit's declared modalities to exactly one, or raise.

    Registration-time guard for the atomicity invariant.
    """
    uniq = sorted(set(declared))
    if len(uniq) != 1:
        raise AtomicityViolation(f"unit declares modalities {uniq}; exactly one required")
    return Modality(uniq[0])


# --- persistence ------------------------------------------------------------

def _canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def persist(kb: KnowledgeBase, root: Path | str) -> None:
    """Write the knowledge base under ``root``: one document per entity plus
    ``index.json`` with the version and per-document SHA-256 checksums."""
    root = Path(root)
    snap = kb.snapshot()
    checksums: dict[str, str] = {}
    docs: dict[str, str] = {}
    for ds in snap.data_lake:
        docs[f"datasets/{ds.id}.json"] = _canonical_json(ds.to_dict())
    for te in snap.tool_lake:
        docs[f"tools/{te.descriptor.id}.json"] = _canonical_json(te.to_dict())
    for c in snap.case_lake:
        docs[f"cases/{c.id}.json"] = _canonical_json(c.to_dict())

    for sub in ("datasets", "tools", "cases"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    # clear stale entity documents so the store mirrors the value exactly
    for sub in ("datasets", "tools", "cases"):
        for old in (root / sub).glob("*.json"):
            rel = f"{sub}/{old.name}"
            if rel not in docs:
                old.unlink()
    for rel, text in docs.items():
        (root / rel).write_text(text, encoding="utf-8")
        checksums[rel] = _sha256(text)

    index = {
        "schema_version": STORE_SCHEMA_VERSION,
        "version": snap.version,
        # registration order matters for round-trip identity
        "order": {
            "datasets": [ds.id for ds in snap.data_lake],
            "tools": [t.descriptor.id for t in snap.tool_lake],
            "cases": [c.id for c in snap.case_lake],
        },
        "checksums": checksums,
    }
    (root / "index.json").write_text(_canonical_json(index), encoding="utf-8")


def load(root: Path | str) -> KnowledgeBase:
    """Reload a persisted knowledge base, verifying schema version and checksums."""
    root = Path(root)
    index_path = root / "index.json"
    if not index_path.is_file():
        raise CorruptStore(f"missing index: {index_path}")
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, OSError) as exc:
        raise CorruptStore(f"unreadable index: {exc}") from exc
    if index.get("schema_version") != STORE_SCHEMA_VERSION:
        raise CorruptStore(
            f"schema version mismatch: {index.get('schema_version')} != {STORE_SCHEMA_VERSION}"
        )

    checksums = index.get("checksums", {})
    order = index.get("order", {})

    def read_doc(rel: str) -> dict:
        path = root / rel
        if rel not in checksums:
            raise CorruptStore(f"document not indexed: {rel}")
        if not path.is_file():
            raise CorruptStore(f"missing entity document: {rel}")
        text = path.read_text(encoding="utf-8")
        if _sha256(text) != checksums[rel]:
            raise CorruptStore(f"checksum failure for {rel}")
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorruptStore(f"malformed entity document {rel}: {exc}") from exc

    kb = KnowledgeBase()
    for ds_id in order.get("datasets", []):
        kb.data_lake.append(DatasetEntry.from_dict(read_doc(f"datasets/{ds_id}.json")))
    for tool_id in order.get("tools", []):
        kb.tool_lake.append(ToolEntry.from_dict(read_doc(f"tools/{tool_id}.json")))
    for case_id in order.get("cases", []):
        kb.case_lake.append(Case.from_dict(read_doc(f"cases/{case_id}.json")))
    indexed = {f"datasets/{i}.json" for i in order.get("datasets", [])}
    indexed |= {f"tools/{i}.json" for i in order.get("tools", [])}
    indexed |= {f"cases/{i}.json" for i in order.get("cases", [])}
    if indexed != set(checksums):
        raise CorruptStore("index order and checksum listings disagree")
    kb.version = int(index.get("version", 0))
    kb.check_integrity()
    return kb

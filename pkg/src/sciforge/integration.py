"""Data integration agent: strategy -> explicit constraints -> ordered tool
sequence -> unified dataset, with slot-local failure-aware backtracking.

Constraints pair a required relation among components (temporal
synchronization, schema mapping, ...) with a required output structure
(tabular/graph/tensor). Tool ordering follows a fixed precedence lattice
(clean < align < map < aggregate < assemble < split) with declared
``order_after`` edges on top; every constraint gets a machine-checkable
certificate after execution.
"""

from __future__ import annotations

import csv
import json
import os
import re
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from .backends import BackendRequest, PlannerBackend, Role, payload_is_well_formed
from .errors import (
    BacktrackExhausted,
    ConstraintViolation,
    NoCandidate,
    PrecedenceCycle,
    UnsatisfiableStrategy,
)
from .knowledge_base import KnowledgeBase, StructureKind, ToolDescriptor
from .sandbox import Sandbox, run_tool

DEFAULT_MAX_BACKTRACKS = 4

RELATION_KINDS = (
    "ontology_alignment",
    "semantic_correspondence",
    "temporal_synchronization",
    "schema_mapping",
)

# fixed precedence lattice for sequencing integration tools
_PRECEDENCE_CLASS = {
    "clean": 0,
    "align_temporal": 1,
    "map_schema": 2,
    "encode": 2,
    "aggregate": 3,
    "join": 4,
    "split": 5,
}


@dataclass
class IntegrationConstraint:
    relation: str | None = None
    relation_params: dict = field(default_factory=dict)
    structure: str | None = None
    structure_params: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.relation is None and self.structure is None:
            raise ValueError("constraint needs a relation or a structure requirement")
        if self.relation is not None:
            if self.relation not in RELATION_KINDS:
                raise ValueError(f"unknown relation kind {self.relation!r}")
            if self.relation == "temporal_synchronization" and not self.relation_params.get("granularity"):
                raise ValueError("temporal_synchronization must name a granularity")
        if self.structure is not None:
            StructureKind(self.structure)

    def describe(self) -> str:
        if self.relation:
            return f"{self.relation}({self.relation_params})"
        return f"structure={self.structure}({self.structure_params})"

    def to_dict(self) -> dict:
        return {
            "relation": self.relation,
            "relation_params": self.relation_params,
            "structure": self.structure,
            "structure_params": self.structure_params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntegrationConstraint":
        c = cls(
            relation=d.get("relation"),
            relation_params=dict(d.get("relation_params", {})),
            structure=d.get("structure"),
            structure_params=dict(d.get("structure_params", {})),
        )
        c.validate()
        return c


@dataclass
class ConstraintSet:
    constraints: list[IntegrationConstraint]
    source_strategy: str

    def validate(self) -> None:
        if not self.constraints:
            raise ValueError("constraint set must be non-empty")
        kinds = {c.structure for c in self.constraints if c.structure is not None}
        if len(kinds) > 1:
            raise ValueError(f"contradictory structure requirements: {sorted(kinds)}")
        for c in self.constraints:
            c.validate()

    @property
    def structure_kind(self) -> str | None:
        for c in self.constraints:
            if c.structure is not None:
                return c.structure
        return None

    def to_dict(self) -> dict:
        return {
            "constraints": [c.to_dict() for c in self.constraints],
            "source_strategy": self.source_strategy,
        }


@dataclass
class Certificate:
    constraint: dict
    passed: bool
    evidence: str

    def to_dict(self) -> dict:
        return {"constraint": self.constraint, "passed": self.passed, "evidence": self.evidence}


@dataclass
class Component:
    id: str
    path: str
    annotations: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"id": self.id, "path": self.path, "annotations": self.annotations}


@dataclass
class UnifiedDataset:
    components: list[Component]
    global_schema: list[str]
    certificates: list[Certificate]
    constraint_set: ConstraintSet
    manifest_path: str | None = None

    def all_pass(self) -> bool:
        return all(c.passed for c in self.certificates)

    def to_dict(self) -> dict:
        return {
            "components": [c.to_dict() for c in self.components],
            "global_schema": list(self.global_schema),
            "certificates": [c.to_dict() for c in self.certificates],
            "constraint_set": self.constraint_set.to_dict(),
        }


# --- component inspection -----------------------------------------------------

_TIME_COLUMN_NAMES = ("date", "time", "month", "year", "timestamp", "datetime")

_GRAN_PATTERNS = {
    "yearly": re.compile(r"^\d{4}$"),
    "monthly": re.compile(r"^\d{4}-\d{2}$"),
    "daily": re.compile(r"^\d{4}-\d{2}-\d{2}$"),
    "hourly": re.compile(r"^\d{4}-\d{2}-\d{2}[ T]\d{2}:00(:00)?$"),
}


def _read_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        return [], []
    return rows[0], rows[1:]


def _time_column(header: list[str], hint: str | None = None) -> str | None:
    if hint and hint in header:
        return hint
    lower = {h.lower(): h for h in header}
    for name in _TIME_COLUMN_NAMES:
        if name in lower:
            return lower[name]
    return None


def _value_granularity(value: str) -> str | None:
    v = value.strip()
    for gran, pattern in _GRAN_PATTERNS.items():
        if pattern.match(v):
            return gran
    return None


def inspect_component(path: str | Path) -> dict:
    """Fields + apparent temporal granularity of one tabular component."""
    header, rows = _read_table(path)
    granularity = None
    tcol = _time_column(header)
    if tcol and rows:
        idx = header.index(tcol)
        grans = {_value_granularity(r[idx]) for r in rows[:50] if idx < len(r)}
        if len(grans) == 1:
            granularity = grans.pop()
    return {
        "name": Path(path).name,
        "fields": header,
        "granularity": granularity,
        "row_count": len(rows),
        "modality": "tabular",
    }


# --- constraint extraction ------------------------------------------------------

def extract_constraints(
    strategy: str,
    component_paths: list[str | Path],
    backend: PlannerBackend,
) -> ConstraintSet:
    """Ground the integration strategy text into explicit constraints.

    Every constraint must reference fields/granularities actually present in
    the components; otherwise :class:`UnsatisfiableStrategy`.
    """
    if not component_paths:
        raise ValueError("integration requires at least one processed component")
    components = [inspect_component(p) for p in component_paths]
    resp = backend.complete(BackendRequest(
        role=Role.CONSTRAINT_EXTRACTION,
        context={"strategy": strategy, "components": components},
    ))
    if not payload_is_well_formed(Role.CONSTRAINT_EXTRACTION, resp.payload):
        raise UnsatisfiableStrategy("backend returned malformed constraints")
    if "error" in resp.payload and "constraints" not in resp.payload:
        raise UnsatisfiableStrategy(str(resp.payload["error"]))
    cs = ConstraintSet(
        constraints=[IntegrationConstraint.from_dict(c) for c in resp.payload["constraints"]],
        source_strategy=strategy,
    )
    cs.validate()
    return cs


# --- tool matching and ordering ---------------------------------------------------

_RELATION_TO_TAG = {
    "temporal_synchronization": "align_temporal",
    "schema_mapping": "map_schema",
    "ontology_alignment": "map_schema",
    "semantic_correspondence": "map_schema",
}

_STRUCTURE_TO_MODALITY = {"tabular": "tabular", "graph": "tabular", "tensor": "tensor"}


def _output_compatible(tool: ToolDescriptor, structure: str | None) -> bool:
    if structure is None:
        return True
    want = _STRUCTURE_TO_MODALITY[structure]
    return any(slot.modality.value == want for slot in tool.output_contract)


def match_tools(
    constraint_set: ConstraintSet, kb: KnowledgeBase
) -> list[tuple[IntegrationConstraint, list[str]]]:
    """Per relation constraint, the tools able to realize it (id order).

    A schema mapping with join keys wants a join-capable tool; other mappings
    want schema mappers. Structure-only constraints need no tool (assembly and
    validation are engine steps). Raises :class:`NoCandidate` when a relation
    constraint matches nothing.
    """
    snap = kb.snapshot()
    structure = constraint_set.structure_kind
    out = []
    for constraint in constraint_set.constraints:
        if constraint.relation is None:
            continue
        tag = _RELATION_TO_TAG[constraint.relation]
        if constraint.relation == "schema_mapping" and constraint.relation_params.get("keys"):
            tag = "join"
        candidates = sorted(
            t.descriptor.id
            for t in snap.tool_lake
            if tag in t.descriptor.capability_tags
            and _output_compatible(t.descriptor, structure)
        )
        if not candidates:
            raise NoCandidate(
                f"no tool in the lake realizes {constraint.describe()}",
                constraint=constraint,
            )
        out.append((constraint, candidates))
    return out


def _tool_class(tool: ToolDescriptor) -> int:
    classes = [_PRECEDENCE_CLASS[t] for t in tool.capability_tags if t in _PRECEDENCE_CLASS]
    return min(classes) if classes else 2


def order_tools(
    selection: list[tuple[IntegrationConstraint, list[str]]], kb: KnowledgeBase
) -> list[tuple[IntegrationConstraint, list[str]]]:
    """Topological order: precedence lattice + declared order_after edges,
    ties broken by tool id."""
    slots = []
    for constraint, candidates in selection:
        tool = kb.tool(candidates[0])
        slots.append({
            "constraint": constraint,
            "candidates": candidates,
            "class": _tool_class(tool) if tool else 2,
            "id": candidates[0],
        })

    n = len(slots)
    edges: dict[int, set[int]] = {i: set() for i in range(n)}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if slots[i]["class"] < slots[j]["class"]:
                edges[i].add(j)
    # declared ordering dependencies between chosen tools
    for i in range(n):
        tool = kb.tool(slots[i]["id"])
        if tool is None:
            continue
        for after in tool.order_after:
            for j in range(n):
                if slots[j]["id"] == after:
                    edges[j].add(i)

    indeg = {i: 0 for i in range(n)}
    for src, dsts in edges.items():
        for d in dsts:
            indeg[d] += 1
    ordered: list[int] = []
    ready = sorted((i for i in range(n) if indeg[i] == 0), key=lambda i: slots[i]["id"])
    while ready:
        i = ready.pop(0)
        ordered.append(i)
        for d in sorted(edges[i], key=lambda j: slots[j]["id"]):
            indeg[d] -= 1
            if indeg[d] == 0:
                ready.append(d)
        ready.sort(key=lambda i: slots[i]["id"])
    if len(ordered) != n:
        raise PrecedenceCycle("declared tool dependencies contradict the precedence lattice")
    return [(slots[i]["constraint"], slots[i]["candidates"]) for i in ordered]


# --- per-constraint verification ----------------------------------------------------

def _check_temporal(paths: list[str], granularity: str, hint: str | None) -> Certificate:
    checked = 0
    for path in paths:
        header, rows = _read_table(path)
        tcol = _time_column(header, hint)
        if tcol is None:
            return Certificate(
                {"relation": "temporal_synchronization", "granularity": granularity},
                False, f"{Path(path).name}: no time column found in {header}",
            )
        idx = header.index(tcol)
        for r in rows:
            v = r[idx].strip()
            if _value_granularity(v) != granularity:
                return Certificate(
                    {"relation": "temporal_synchronization", "granularity": granularity},
                    False,
                    f"{Path(path).name}: value {v!r} in {tcol!r} not aligned to {granularity} boundary",
                )
            checked += 1
    return Certificate(
        {"relation": "temporal_synchronization", "granularity": granularity},
        True, f"all {checked} time values across {len(paths)} component(s) on {granularity} boundaries",
    )


def _column_type(values: list[str]) -> str:
    present = [v for v in values if v.strip()]
    if not present:
        return "empty"
    try:
        for v in present:
            float(v)
        return "numeric"
    except ValueError:
        return "string"


def _check_schema_mapping(paths: list[str], keys: list[str]) -> Certificate:
    doc = {"relation": "schema_mapping", "keys": keys}
    if not keys:
        return Certificate(doc, True, "no explicit key fields to verify")
    types: dict[str, set[str]] = {k: set() for k in keys}
    for path in paths:
        header, rows = _read_table(path)
        lower = {h.lower(): h for h in header}
        for k in keys:
            if k.lower() not in lower:
                return Certificate(doc, False, f"{Path(path).name}: mapped field {k!r} missing")
            idx = header.index(lower[k.lower()])
            types[k].add(_column_type([r[idx] for r in rows if idx < len(r)]))
    for k, seen in types.items():
        seen.discard("empty")
        if len(seen) > 1:
            return Certificate(doc, False, f"mapped field {k!r} has incompatible types {sorted(seen)}")
    return Certificate(doc, True, f"mapped fields {keys} present and type-compatible everywhere")


def _check_tabular(paths: list[str], params: dict) -> Certificate:
    doc = {"structure": "tabular", **params}
    required = [c.lower() for c in params.get("required_columns", [])]
    key_field = params.get("key_field")
    for path in paths:
        header, rows = _read_table(path)
        if not header:
            return Certificate(doc, False, f"{Path(path).name}: empty or headerless table")
        lower = [h.lower() for h in header]
        missing = [c for c in required if c not in lower]
        if missing:
            return Certificate(doc, False, f"{Path(path).name}: required columns missing {missing}")
        kcol = _time_column(header, key_field) or header[0]
        idx = header.index(kcol)
        seen: set[str] = set()
        for r in rows:
            v = r[idx].strip() if idx < len(r) else ""
            if not v:
                return Certificate(doc, False, f"{Path(path).name}: empty row key in {kcol!r}")
            if v in seen:
                return Certificate(doc, False, f"{Path(path).name}: duplicate row key {v!r} in {kcol!r}")
            seen.add(v)
    return Certificate(doc, True, f"{len(paths)} tabular component(s) with unique row keys")


def _check_structure_other(paths: list[str], structure: str) -> Certificate:
    doc = {"structure": structure}
    for path in paths:
        if not Path(path).is_file():
            return Certificate(doc, False, f"component missing: {path}")
    return Certificate(doc, True, f"{len(paths)} component file(s) present")


def validate_structure(
    component_paths: list[str], constraint_set: ConstraintSet
) -> list[Certificate]:
    """Machine-check every constraint against the assembled components."""
    paths = [str(p) for p in component_paths]
    certs = []
    for constraint in constraint_set.constraints:
        if constraint.relation == "temporal_synchronization":
            certs.append(_check_temporal(
                paths,
                constraint.relation_params["granularity"],
                constraint.relation_params.get("time_field"),
            ))
        elif constraint.relation == "schema_mapping":
            certs.append(_check_schema_mapping(paths, constraint.relation_params.get("keys", [])))
        elif constraint.relation in ("ontology_alignment", "semantic_correspondence"):
            certs.append(_check_schema_mapping(paths, constraint.relation_params.get("keys", [])))
        elif constraint.structure == "tabular":
            certs.append(_check_tabular(paths, constraint.structure_params))
        elif constraint.structure in ("graph", "tensor"):
            certs.append(_check_structure_other(paths, constraint.structure))
    return certs


# --- execution with backtracking ------------------------------------------------------

def _run_slot_tool(
    tool: ToolDescriptor,
    components: list[str],
    constraint: IntegrationConstraint,
    sandbox: Sandbox,
    work_root: Path,
    slot: int,
    attempt: int,
) -> tuple[bool, list[str], str]:
    """Run one integration tool over the current components."""
    params: dict = {}
    if constraint.relation == "temporal_synchronization":
        params["granularity"] = constraint.relation_params["granularity"]
    if constraint.relation == "schema_mapping" and constraint.relation_params.get("keys"):
        params["keys"] = constraint.relation_params["keys"]
    if constraint.relation == "ontology_alignment":
        params["mapping"] = constraint.relation_params.get("mapping", {})

    single_input = len(tool.input_contract) == 1
    runs: list[list[str]]
    if single_input and len(components) > 1:
        runs = [[c] for c in components]
    else:
        runs = [list(components)]

    produced: list[str] = []
    for k, run_inputs in enumerate(runs):
        workdir = work_root / f"slot{slot}-try{attempt}-run{k}"
        outputs = ["out" if {"split", "align_temporal"} & set(tool.capability_tags) else "out.csv"]
        # inputs go into task.json relative to the workdir so the documents
        # (and hence the workspace bytes) are identical across runs
        rel_inputs = [os.path.relpath(Path(c).resolve(), workdir) for c in run_inputs]
        outcome = run_tool(
            sandbox=sandbox,
            command=tool.command,
            workdir=workdir,
            inputs=rel_inputs,
            params=params,
            outputs=outputs,
            timeout_s=tool.timeout_s,
            label=f"integrate:{tool.id}",
        )
        if not outcome.ok:
            return False, [], outcome.result.failure_excerpt()
        for o in outcome.outputs:
            p = Path(o)
            produced.append(str(p if p.is_absolute() else workdir / o))
    return True, produced, ""


def execute_integration(
    ordered: list[tuple[IntegrationConstraint, list[str]]],
    component_paths: list[str],
    constraint_set: ConstraintSet,
    kb: KnowledgeBase,
    sandbox: Sandbox,
    duni_dir: Path | str,
    max_backtracks: int = DEFAULT_MAX_BACKTRACKS,
) -> UnifiedDataset:
    """Run the tool sequence in order, verifying constraints after each step;
    on failure substitute the next candidate for the failing slot and re-run
    from that slot. Exhaustion raises :class:`BacktrackExhausted` carrying the
    decision trace (one entry per substitution)."""
    if max_backtracks < 0:
        raise ValueError("max_backtracks must be >= 0")
    duni_dir = Path(duni_dir)
    work_root = duni_dir / "work"
    work_root.mkdir(parents=True, exist_ok=True)

    trace: list[dict] = []
    substitutions = 0
    chosen: list[int] = [0] * len(ordered)
    components = [str(p) for p in component_paths]
    slot_inputs: list[list[str]] = [[] for _ in ordered]
    attempt_counter = 0

    slot = 0
    while slot < len(ordered):
        constraint, candidates = ordered[slot]
        slot_inputs[slot] = list(components)
        idx = chosen[slot]
        tool = kb.tool(candidates[idx])
        attempt_counter += 1
        ok, produced, err = _run_slot_tool(
            tool, components, constraint, sandbox, work_root, slot, attempt_counter,
        )
        if ok:
            cert = None
            if constraint.relation == "temporal_synchronization":
                cert = _check_temporal(
                    produced, constraint.relation_params["granularity"],
                    constraint.relation_params.get("time_field"),
                )
            elif constraint.relation == "schema_mapping":
                cert = _check_schema_mapping(produced, constraint.relation_params.get("keys", []))
            if cert is not None and not cert.passed:
                ok, err = False, f"constraint violated after {tool.id}: {cert.evidence}"
        if ok:
            components = produced
            slot += 1
            continue
        # failure: substitute the next candidate in this slot
        if idx + 1 >= len(candidates) or substitutions >= max_backtracks:
            raise BacktrackExhausted(
                f"integration slot {slot} ({constraint.describe()}) failed with no "
                f"alternatives left: {err}",
                trace=trace,
            )
        substitutions += 1
        trace.append({
            "slot": slot,
            "constraint": constraint.describe(),
            "from_tool": candidates[idx],
            "to_tool": candidates[idx + 1],
            "reason": err[:500],
        })
        chosen[slot] = idx + 1
        components = slot_inputs[slot]

    return assemble_unified(components, constraint_set, duni_dir, decision_trace=trace)


def assemble_unified(
    component_paths: list[str],
    constraint_set: ConstraintSet,
    duni_dir: Path | str,
    decision_trace: list[dict] | None = None,
) -> UnifiedDataset:
    """Copy final components under duni/, annotate, validate, and write the
    manifest. All certificates must pass."""
    duni_dir = Path(duni_dir)
    comp_dir = duni_dir / "components"
    comp_dir.mkdir(parents=True, exist_ok=True)

    components = []
    final_paths = []
    for src in component_paths:
        name = Path(src).name
        dst = comp_dir / name
        if Path(src).resolve() != dst.resolve():
            shutil.copyfile(src, dst)
        info = inspect_component(dst)
        components.append(Component(
            id=Path(name).stem,
            path=str(Path("components") / name),
            annotations={
                "semantic_labels": [t for t in re.split(r"[_\-.]", Path(name).stem) if t],
                "fields": info["fields"],
                "granularity": info["granularity"],
                "row_count": info["row_count"],
            },
        ))
        final_paths.append(str(dst))

    certificates = validate_structure(final_paths, constraint_set)
    schema: list[str] = []
    for comp in components:
        for f in comp.annotations["fields"]:
            if f not in schema:
                schema.append(f)

    duni = UnifiedDataset(
        components=components,
        global_schema=schema,
        certificates=certificates,
        constraint_set=constraint_set,
    )
    manifest = duni.to_dict()
    if decision_trace:
        manifest["decision_trace"] = decision_trace
    manifest_path = duni_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    duni.manifest_path = str(manifest_path)
    if not duni.all_pass():
        failed = [c for c in certificates if not c.passed]
        raise ConstraintViolation(
            f"{len(failed)} integration certificate(s) failed: {failed[0].evidence}",
            certificate=failed[0],
        )
    return duni


def run_integration(
    strategy: str,
    component_paths: list[str],
    kb: KnowledgeBase,
    backend: PlannerBackend,
    sandbox: Sandbox,
    duni_dir: Path | str,
    max_backtracks: int = DEFAULT_MAX_BACKTRACKS,
) -> UnifiedDataset:
    """Full integration stage: extract -> match -> order -> execute -> assemble."""
    constraint_set = extract_constraints(strategy, component_paths, backend)
    matched = match_tools(constraint_set, kb)
    ordered = order_tools(matched, kb)
    return execute_integration(
        ordered, [str(p) for p in component_paths], constraint_set,
        kb, sandbox, duni_dir, max_backtracks,
    )

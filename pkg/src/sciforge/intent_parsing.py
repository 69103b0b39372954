"""Intent parsing agent: requirement analysis, case retrieval/adaptation,
plan generation, and the bounded generate/review/revise loop.

The review is a pure function over knowledge-base snapshots; all creative
steps (analysis, adaptation, generation, revision) go through the planner
backend so they stay swappable and auditable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import textutil as tu
from .backends import BackendRequest, PlannerBackend, Role, payload_is_well_formed
from .errors import EmptySelection, NoBindableUnits, UnparsableQuery
from .knowledge_base import Case, DataUnit, KnowledgeBase

DEFAULT_DELTA = 0.6
DEFAULT_MAX_ROUNDS = 3
ANALYSIS_RETRIES = 2


class Availability(str, Enum):
    PRESENT = "present"
    CONSTRUCTIBLE = "constructible"
    MISSING = "missing"


class ReviewDimension(str, Enum):
    REQUIREMENT_ALIGNMENT = "requirement_alignment"
    COVERAGE_COMPLETENESS = "coverage_completeness"
    LOGICAL_CORRECTNESS = "logical_correctness"


@dataclass
class StructuredRequirement:
    objective: str
    variables: list[str]
    constraints: list[str]
    task_kind: str
    availability: dict[str, Availability] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.objective:
            raise ValueError("objective must be non-empty")
        if set(self.availability) != set(self.variables):
            raise ValueError("availability keys must equal the variable list")

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "variables": list(self.variables),
            "constraints": list(self.constraints),
            "task_kind": self.task_kind,
            "availability": {k: v.value for k, v in self.availability.items()},
        }


@dataclass
class UnitSelection:
    unit_id: str
    strategy: str
    tool_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"unit_id": self.unit_id, "strategy": self.strategy, "tool_ids": list(self.tool_ids)}


@dataclass
class PlanProvenance:
    kind: str  # "adapted" | "generated"
    case_id: str | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "case_id": self.case_id}


@dataclass
class Plan:
    unit_selections: list[UnitSelection]
    integration_strategy: str
    provenance: PlanProvenance
    revision: int = 0

    def validate(self, kb: KnowledgeBase) -> None:
        if self.revision < 0:
            raise ValueError("revision must be >= 0")
        if not self.unit_selections:
            raise ValueError("plan needs at least one unit selection")
        for sel in self.unit_selections:
            if kb.unit(sel.unit_id) is None:
                raise ValueError(f"plan references unknown unit {sel.unit_id!r}")

    def to_dict(self) -> dict:
        return {
            "unit_selections": [s.to_dict() for s in self.unit_selections],
            "integration_strategy": self.integration_strategy,
            "provenance": self.provenance.to_dict(),
            "revision": self.revision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Plan":
        prov = d.get("provenance", {}) or {}
        return cls(
            unit_selections=[
                UnitSelection(s["unit_id"], s.get("strategy", ""), list(s.get("tool_ids", [])))
                for s in d.get("unit_selections", [])
            ],
            integration_strategy=d.get("integration_strategy", ""),
            provenance=PlanProvenance(prov.get("kind", "generated"), prov.get("case_id")),
            revision=int(d.get("revision", 0)),
        )


@dataclass
class Finding:
    dimension: ReviewDimension
    message: str

    def to_dict(self) -> dict:
        return {"dimension": self.dimension.value, "message": self.message}


@dataclass
class ReviewVerdict:
    approved: bool
    findings: list[Finding] = field(default_factory=list)

    def __post_init__(self):
        if self.approved and self.findings:
            raise ValueError("an approved verdict cannot carry findings")

    def to_dict(self) -> dict:
        return {"approved": self.approved, "findings": [f.to_dict() for f in self.findings]}


@dataclass
class ParseOutcome:
    plan: Plan
    approved: bool
    verdicts: list[ReviewVerdict]
    requirement: StructuredRequirement

    @property
    def rounds(self) -> int:
        return len(self.verdicts)


# --- requirement analysis -----------------------------------------------

def _unit_summary(u: DataUnit) -> dict:
    sti = u.descriptor.spatiotemporal_index
    return {
        "id": u.id,
        "modality": u.descriptor.modality.value,
        "fields": u.descriptor.field_names(),
        "target_object": u.target_object,
        "path_tokens": tu.content_tokens(u.path.replace("/", " ").replace("_", " ").replace("-", " ").replace(".", " ")),
        "granularity": sti.granularity if sti else None,
        "row_count": u.descriptor.quality.row_count,
    }


def _availability_of(variable: str, units: list[DataUnit], cues: set[str]) -> Availability:
    vtoks = {tu.singularize(t) for t in tu.content_tokens(variable)}
    if not vtoks:
        return Availability.MISSING
    best_hits = 0
    unit_grans: list[str] = []
    for u in units:
        utoks: set[str] = set()
        for f in u.descriptor.field_names():
            utoks.update(tu.singularize(t) for t in tu.tokens(f))
        utoks.update(tu.singularize(t) for t in tu.content_tokens(u.target_object))
        utoks.update(tu.singularize(t) for t in tu.content_tokens(Path(u.path).name.replace("_", " ").replace("-", " ").replace(".", " ")))
        hits = len(vtoks & utoks)
        best_hits = max(best_hits, hits)
        sti = u.descriptor.spatiotemporal_index
        if sti and sti.granularity:
            unit_grans.append(sti.granularity)
    if best_hits == len(vtoks):
        return Availability.PRESENT
    if best_hits > 0:
        return Availability.CONSTRUCTIBLE
    # derivable by aggregation: variable names a granularity coarser than an
    # available unit's native granularity
    for g in tu.granularity_words(variable):
        for ug in unit_grans:
            if tu.GRANULARITY_RANK[g] >= tu.GRANULARITY_RANK.get(ug, 99):
                return Availability.CONSTRUCTIBLE
    if vtoks & cues:
        return Availability.CONSTRUCTIBLE
    return Availability.MISSING


def analyze_requirement(
    query: str, kb: KnowledgeBase, backend: PlannerBackend
) -> StructuredRequirement:
    """Extract {objective, variables, constraints, task kind} and scan the
    data lake for per-variable availability."""
    if not query.strip():
        raise UnparsableQuery("query must be non-empty")
    payload = None
    for attempt in range(1, ANALYSIS_RETRIES + 2):
        resp = backend.complete(BackendRequest(
            role=Role.REQUIREMENT_ANALYSIS, context={"query": query}, attempt=attempt,
        ))
        if payload_is_well_formed(Role.REQUIREMENT_ANALYSIS, resp.payload):
            payload = resp.payload
            break
    if payload is None:
        raise UnparsableQuery(
            f"backend returned malformed requirement structure after {ANALYSIS_RETRIES + 1} attempts"
        )

    units = kb.all_units()
    cues: set[str] = set()
    for ds in kb.snapshot().data_lake:
        cues.update(tu.singularize(c) for c in ds.description.semantic_cues)
    variables = list(dict.fromkeys(payload["variables"]))
    req = StructuredRequirement(
        objective=str(payload["objective"]),
        variables=variables,
        constraints=list(payload["constraints"]),
        task_kind=str(payload["task_kind"]),
        availability={v: _availability_of(v, units, cues) for v in variables},
    )
    req.validate()
    return req


# --- case retrieval ----------------------------------------------------

def similarity(req: StructuredRequirement, case_desc: str) -> float:
    """Jaccard over stopword-stripped token sets of (Obj + Var + Con) vs the
    case description."""
    req_text = " ".join([req.objective, *req.variables, *req.constraints])
    return tu.jaccard(tu.token_set(req_text), tu.token_set(case_desc))


def retrieve_case(
    req: StructuredRequirement,
    case_lake: list[Case],
    delta: float = DEFAULT_DELTA,
    scorer=None,
) -> tuple[Case, float] | None:
    """Best-scoring case iff its score strictly exceeds delta; id breaks ties.

    ``scorer(req, description) -> float`` defaults to token-set Jaccard; a
    remote backend may substitute an embedding metric behind the same contract.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie strictly between 0 and 1")
    scorer = scorer or similarity
    best: tuple[float, str, Case] | None = None
    for case in case_lake:
        score = scorer(req, case.description)
        if best is None or score > best[0] or (score == best[0] and case.id < best[1]):
            best = (score, case.id, case)
    if best is None or not best[0] > delta:
        return None
    return best[2], best[0]


# --- plan construction ----------------------------------------------------

def _plan_from_payload(payload: dict, revision: int = 0) -> tuple[Plan, list[Finding]]:
    selections = [
        UnitSelection(s["unit_id"], s.get("strategy", ""), list(s.get("tool_ids", [])))
        for s in payload["unit_selections"]
    ]
    prov = payload.get("provenance", {}) or {}
    plan = Plan(
        unit_selections=selections,
        integration_strategy=payload.get("integration_strategy", ""),
        provenance=PlanProvenance(prov.get("kind", "generated"), prov.get("case_id")),
        revision=revision,
    )
    findings = [
        Finding(ReviewDimension(f["dimension"]), f.get("message", ""))
        for f in payload.get("findings", [])
    ]
    return plan, findings


def _tool_summaries(kb: KnowledgeBase) -> list[dict]:
    return [
        {"id": t.descriptor.id, "capability": t.descriptor.capability,
         "tags": list(t.descriptor.capability_tags)}
        for t in kb.snapshot().tool_lake
    ]


def adapt_plan(
    seed: Case, req: StructuredRequirement, kb: KnowledgeBase, backend: PlannerBackend
) -> tuple[Plan, list[Finding]]:
    """Differential adaptation of a retrieved case onto the current data lake."""
    units = [_unit_summary(u) for u in kb.all_units()]
    resp = backend.complete(BackendRequest(
        role=Role.PLAN_ADAPTATION,
        context={"case": seed.to_dict(), "requirement": req.to_dict(), "units": units},
    ))
    if resp.payload.get("error") == "no_bindable_units":
        raise NoBindableUnits(f"case {seed.id!r}: no archetype binds to any unit")
    if not payload_is_well_formed(Role.PLAN_ADAPTATION, resp.payload):
        raise NoBindableUnits(f"case {seed.id!r}: backend returned malformed adaptation")
    plan, findings = _plan_from_payload(resp.payload)
    plan.validate(kb)
    return plan, findings


def generate_plan(
    req: StructuredRequirement, kb: KnowledgeBase, backend: PlannerBackend,
    query: str = "",
) -> Plan:
    """Fallback multi-step generation when no case clears the threshold."""
    units = [_unit_summary(u) for u in kb.all_units()]
    resp = backend.complete(BackendRequest(
        role=Role.PLAN_GENERATION,
        context={
            "requirement": req.to_dict(),
            "units": units,
            "tools": _tool_summaries(kb),
            "query": query,
        },
    ))
    if resp.payload.get("error") == "empty_selection":
        raise EmptySelection("no unit in the data lake matches any requirement variable")
    if not payload_is_well_formed(Role.PLAN_GENERATION, resp.payload):
        raise EmptySelection("backend returned a malformed plan")
    plan, _ = _plan_from_payload(resp.payload)
    plan.validate(kb)
    return plan


# --- review ---------------------------------------------------------------

def _plan_text(plan: Plan) -> str:
    return " ".join(
        [s.strategy for s in plan.unit_selections] + [plan.integration_strategy]
    )


def _variable_claimed(variable: str, plan: Plan, kb: KnowledgeBase) -> bool:
    vtoks = {tu.singularize(t) for t in tu.content_tokens(variable)}
    if not vtoks:
        return True
    for sel in plan.unit_selections:
        stoks = {tu.singularize(t) for t in tu.content_tokens(sel.strategy)}
        if vtoks <= stoks:
            return True
        unit = kb.unit(sel.unit_id)
        if unit is not None:
            utoks: set[str] = set()
            for f in unit.descriptor.field_names():
                utoks.update(tu.singularize(t) for t in tu.tokens(f))
            utoks.update(tu.singularize(t) for t in tu.content_tokens(unit.target_object))
            if vtoks <= utoks:
                return True
    return False


def _aggregation_named(plan: Plan, kb: KnowledgeBase) -> bool:
    snap = kb.snapshot()
    agg_tools = {
        t.descriptor.id for t in snap.tool_lake if "aggregate" in t.descriptor.capability_tags
    }
    for sel in plan.unit_selections:
        if set(sel.tool_ids) & agg_tools:
            return True
    text = _plan_text(plan).lower()
    return any(w in text for w in ("aggregate", "average", "mean", "resample"))


def review_plan(
    plan: Plan, req: StructuredRequirement, kb: KnowledgeBase
) -> ReviewVerdict:
    """Three-dimension assessment: alignment, coverage, logical correctness."""
    findings: list[Finding] = []

    # (1) requirement alignment: the plan must still talk about the objective
    obj_toks = {tu.singularize(t) for t in tu.content_tokens(req.objective)}
    plan_toks = {tu.singularize(t) for t in tu.content_tokens(_plan_text(plan))}
    if obj_toks and not obj_toks <= plan_toks:
        missing = sorted(obj_toks - plan_toks)
        findings.append(Finding(
            ReviewDimension.REQUIREMENT_ALIGNMENT,
            f"plan drifted from the requested objective {req.objective!r}; "
            f"missing tokens {missing}",
        ))

    # (2) coverage: every available-or-constructible variable must be claimed
    for variable in req.variables:
        if req.availability.get(variable) is Availability.MISSING:
            continue
        if not _variable_claimed(variable, plan, kb):
            findings.append(Finding(
                ReviewDimension.COVERAGE_COMPLETENESS,
                f"variable '{variable}' is available but not claimed by any unit selection",
            ))

    # (3) logical correctness: no merging across mismatched granularities
    #     unless an aggregation step is named
    grans: set[str] = set()
    for sel in plan.unit_selections:
        unit = kb.unit(sel.unit_id)
        if unit and unit.descriptor.spatiotemporal_index:
            g = unit.descriptor.spatiotemporal_index.granularity
            if g:
                grans.add(g)
    grans.update(tu.granularity_words(plan.integration_strategy))
    if len(grans) > 1 and not _aggregation_named(plan, kb):
        findings.append(Finding(
            ReviewDimension.LOGICAL_CORRECTNESS,
            f"integration merges mismatched temporal granularities {sorted(grans)} "
            "without naming an aggregation step",
        ))

    return ReviewVerdict(approved=not findings, findings=findings)


# --- the loop ---------------------------------------------------------------

def _write_plan_revision(
    workspace_plan_dir: Path | None, plan: Plan, verdicts: list[ReviewVerdict],
    query: str,
) -> None:
    if workspace_plan_dir is None:
        return
    doc = {
        "query": query,
        "plan": plan.to_dict(),
        "verdict_history": [v.to_dict() for v in verdicts],
    }
    path = Path(workspace_plan_dir) / f"plan.rev{plan.revision}.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def parse_intent(
    query: str,
    kb: KnowledgeBase,
    backend: PlannerBackend,
    delta: float = DEFAULT_DELTA,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    plan_dir: Path | str | None = None,
) -> ParseOutcome:
    """analyze -> retrieve/adapt-or-generate -> review -> revise, bounded.

    Returns the approved plan, or the last reviewed plan tagged unapproved
    together with the full verdict history.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    req = analyze_requirement(query, kb, backend)

    retrieved = retrieve_case(req, kb.snapshot().case_lake, delta)
    pending: list[Finding] = []
    if retrieved is not None:
        plan, pending = adapt_plan(retrieved[0], req, kb, backend)
    else:
        plan = generate_plan(req, kb, backend, query=query)

    plan_dir = Path(plan_dir) if plan_dir else None
    verdicts: list[ReviewVerdict] = []
    units_ctx = [_unit_summary(u) for u in kb.all_units()]
    for round_no in range(1, max_rounds + 1):
        verdict = review_plan(plan, req, kb)
        if pending:
            # adaptation left unresolved bindings; surface them for revision
            verdict = ReviewVerdict(approved=False, findings=verdict.findings + pending)
        pending = []
        verdicts.append(verdict)
        _write_plan_revision(plan_dir, plan, verdicts, query)
        if verdict.approved:
            return ParseOutcome(plan, True, verdicts, req)
        if round_no == max_rounds:
            break
        resp = backend.complete(BackendRequest(
            role=Role.PLAN_REVIEW_FEEDBACK,
            context={
                "plan": plan.to_dict(),
                "requirement": req.to_dict(),
                "findings": [f.to_dict() for f in verdict.findings],
                "units": units_ctx,
                "tools": _tool_summaries(kb),
                "query": query,
            },
            attempt=round_no,
        ))
        if payload_is_well_formed(Role.PLAN_REVIEW_FEEDBACK, resp.payload):
            revised, _ = _plan_from_payload(resp.payload, revision=plan.revision + 1)
            try:
                revised.validate(kb)
                plan = revised
            except ValueError:
                plan = Plan(plan.unit_selections, plan.integration_strategy,
                            plan.provenance, plan.revision + 1)
        else:
            plan = Plan(plan.unit_selections, plan.integration_strategy,
                        plan.provenance, plan.revision + 1)
        _write_plan_revision(plan_dir, plan, verdicts, query)

    return ParseOutcome(plan, False, verdicts, req)

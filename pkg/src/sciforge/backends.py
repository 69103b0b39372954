"""Pluggable reasoning oracle behind every agent decision point.

Three interchangeable backends sit behind one ``complete(request)`` call:

* ``DeterministicBackend`` — pure keyword/rule functions of the request,
  good enough to drive the whole engine offline and keep every test hermetic;
* ``ScriptedBackend`` — replays a recorded response sequence exactly
  (fail-then-succeed harnesses);
* ``RemoteBackend`` — one JSON-over-HTTP chat-completion call per request
  with schema validation, bounded retries, and request/response audit logs.

All payloads are structured dicts, never free prose parsed by regex, so a
malformed response is always detectable.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import textutil as tu
from .errors import (
    BackendTimeout,
    BackendUnavailable,
    MalformedResponse,
    ScriptExhausted,
)
from .exploration_scripts import SCRIPTS_BY_KIND


class Role(str, Enum):
    REQUIREMENT_ANALYSIS = "requirement_analysis"
    SCRIPT_SYNTHESIS = "script_synthesis"
    PLAN_ADAPTATION = "plan_adaptation"
    PLAN_GENERATION = "plan_generation"
    PLAN_REVIEW_FEEDBACK = "plan_review_feedback"
    PROGRAM_SYNTHESIS = "program_synthesis"
    PROGRAM_REPAIR = "program_repair"
    CONSTRAINT_EXTRACTION = "constraint_extraction"
    ANALYSIS_SUMMARY = "analysis_summary"


@dataclass
class BackendRequest:
    role: Role
    context: dict
    attempt: int = 1

    def validate(self) -> None:
        if self.attempt < 1:
            raise ValueError("attempt must be >= 1")


@dataclass
class BackendResponse:
    payload: dict
    diagnostics: str = ""


# keys a payload must carry per role ("|" groups: any one group suffices)
_REQUIRED_KEYS: dict[Role, list[set[str]]] = {
    Role.REQUIREMENT_ANALYSIS: [{"objective", "variables", "constraints", "task_kind"}],
    Role.SCRIPT_SYNTHESIS: [{"script"}],
    Role.PLAN_ADAPTATION: [{"unit_selections", "integration_strategy"}, {"error"}],
    Role.PLAN_GENERATION: [{"unit_selections", "integration_strategy"}, {"error"}],
    Role.PLAN_REVIEW_FEEDBACK: [{"unit_selections", "integration_strategy"}],
    Role.PROGRAM_SYNTHESIS: [{"driver"}],
    Role.PROGRAM_REPAIR: [{"driver"}],
    Role.CONSTRAINT_EXTRACTION: [{"constraints"}, {"error"}],
    Role.ANALYSIS_SUMMARY: [{"summary"}],
}


def payload_is_well_formed(role: Role, payload: dict) -> bool:
    if not isinstance(payload, dict):
        return False
    groups = _REQUIRED_KEYS[role]
    return any(g <= set(payload.keys()) for g in groups)


class PlannerBackend:
    """Interface; backends are shareable across threads."""

    name = "backend"

    def complete(self, req: BackendRequest) -> BackendResponse:
        raise NotImplementedError


# --------------------------------------------------------------------------
# deterministic rules
# --------------------------------------------------------------------------

_TASK_VERBS = {
    "explore", "exploring", "analyze", "analyse", "investigate", "study",
    "studying", "examine", "process", "prepare", "build", "construct",
}

_TASK_KIND_RULES = [
    (re.compile(r"\bexplor"), "exploratory study"),
    (re.compile(r"\bmechanis"), "mechanism analysis"),
    (re.compile(r"\b(predict|forecast)"), "prediction"),
    (re.compile(r"\bclassif"), "classification"),
    (re.compile(r"\b(process|merge|aggregat|averag|split|clean|prepar|join|align)"),
     "data preparation"),
]

_CONSTRAINT_MARKERS = {"under", "during", "given", "within"}


def _phrases(text: str, drop: set[str]) -> list[str]:
    """Contiguous runs of content tokens, broken at stopwords/dropped tokens."""
    out: list[str] = []
    current: list[str] = []
    for tok in tu.tokens(text):
        if tok in tu.STOPWORDS or tok in drop or tok in tu.ACTION_VERBS or tok in _TASK_VERBS:
            if current:
                out.append(" ".join(current))
                current = []
        else:
            current.append(tok)
    if current:
        out.append(" ".join(current))
    return out


def analyze_query(query: str) -> dict:
    """Rule-based requirement extraction: objective, variables, constraints, task kind."""
    toks = tu.tokens(query)

    constraints: list[str] = []
    consumed: set[str] = set()
    for i, tok in enumerate(toks):
        if tok in _CONSTRAINT_MARKERS:
            phrase = []
            for nxt in toks[i + 1:]:
                if nxt in tu.STOPWORDS or nxt in _CONSTRAINT_MARKERS:
                    break
                phrase.append(nxt)
            if phrase:
                constraints.append(" ".join(phrase))
                consumed.update(phrase)
    for gran in tu.granularity_words(query):
        if gran not in constraints:
            constraints.append(gran)

    # objective: pre-colon head phrase, else the "of <noun>" pattern
    objective = ""
    if ":" in query:
        head = query.split(":", 1)[0]
        head_phrases = _phrases(head, consumed)
        objective = head_phrases[0] if head_phrases else ""
    else:
        m = re.search(r"\bof\s+([a-zA-Z][\w-]*)", query)
        if m and m.group(1).lower() not in consumed:
            objective = tu.singularize(m.group(1).lower())
    if not objective:
        content = tu.content_tokens(query)
        objective = tu.singularize(content[0]) if content else "data"
    consumed.update(tu.tokens(objective))

    task_parts = []
    low = query.lower()
    for pattern, kind in _TASK_KIND_RULES:
        if pattern.search(low) and kind not in task_parts:
            task_parts.append(kind)
    task_kind = ", ".join(task_parts) if task_parts else "analysis"

    if ":" in query:
        clause_text = query.split(":", 1)[1]
        clauses = tu.split_clauses(clause_text)
    else:
        clauses = [query]
    variables: list[str] = []
    for clause in clauses:
        for phrase in _phrases(clause, consumed):
            if phrase and phrase not in variables:
                variables.append(phrase)

    return {
        "objective": objective,
        "variables": variables,
        "constraints": constraints,
        "task_kind": task_kind,
    }


def _unit_tokens(unit: dict) -> set[str]:
    toks: set[str] = set()
    for f in unit.get("fields", []):
        toks.update(tu.tokens(f))
    toks.update(tu.tokens(unit.get("target_object", "")))
    toks.update(unit.get("path_tokens", []))
    return {tu.singularize(t) for t in toks}


def _variable_matches(variable: str, unit: dict) -> str:
    """'full', 'partial', or '' depending on token overlap with a unit."""
    vtoks = {tu.singularize(t) for t in tu.content_tokens(variable)}
    if not vtoks:
        return ""
    utoks = _unit_tokens(unit)
    hit = vtoks & utoks
    if hit == vtoks:
        return "full"
    if hit:
        return "partial"
    return ""


_ACTION_STEMS = {tu.singularize(v) for v in tu.ACTION_VERBS}


def _score_tool(clause: str, tool: dict) -> int:
    ctoks = {tu.singularize(t) for t in tu.content_tokens(clause)}
    ttoks: set[str] = set()
    ttoks.update(tu.singularize(t) for t in tu.content_tokens(tool.get("capability", "")))
    for tag in tool.get("tags", []):
        ttoks.update(tag.split("_"))
    ttoks.update(t for t in tool.get("id", "").replace("-", "_").split("_") if t)
    overlap = ctoks & {tu.singularize(t) for t in ttoks}
    # a tool qualifies only when it matches the clause's action, not just its nouns
    if not overlap & _ACTION_STEMS:
        return 0
    return len(overlap)


def best_tool_for_clause(clause: str, tools: list[dict]) -> tuple[str | None, int]:
    best_id, best_score = None, 0
    for tool in sorted(tools, key=lambda t: t.get("id", "")):
        s = _score_tool(clause, tool)
        if s > best_score:
            best_id, best_score = tool["id"], s
    return best_id, best_score


def _clause_is_action(clause: str) -> bool:
    return bool(set(tu.tokens(clause)) & tu.ACTION_VERBS)


def _target_granularity(query: str) -> str | None:
    """Granularity the outputs should land on, per aggregation clauses."""
    for clause in tu.split_clauses(query):
        ctoks = set(tu.tokens(clause))
        if ctoks & {"average", "averages", "aggregate", "mean", "means", "resample"}:
            grans = tu.granularity_words(clause)
            if len(grans) >= 2:
                return tu.coarsest_granularity(grans)
            if len(grans) == 1:
                return grans[0]
    return None


def generate_plan_payload(ctx: dict) -> dict:
    req = ctx["requirement"]
    units = ctx.get("units", [])
    tools = ctx.get("tools", [])
    query = ctx.get("query", "")

    matched: dict[str, list[str]] = {}
    for variable in dict.fromkeys(req.get("variables", [])):
        for unit in units:
            if _variable_matches(variable, unit):
                matched.setdefault(unit["id"], []).append(variable)
    if not matched:
        return {"error": "empty_selection"}

    primary = max(
        (u for u in units if u["id"] in matched),
        key=lambda u: (u.get("row_count", 0), u["id"]),
    )["id"]

    clauses = tu.split_clauses(query or " ".join(req.get("variables", [])))
    action_clauses = [c for c in clauses if _clause_is_action(c)]
    selections = []
    for unit_id in sorted(matched):
        if unit_id == primary:
            strategy = "; ".join(action_clauses) if action_clauses else (
                f"prepare {unit_id} covering " + ", ".join(matched[unit_id])
            )
            tool_ids = []
            for clause in action_clauses:
                tid, score = best_tool_for_clause(clause, tools)
                if tid and score > 0 and tid not in tool_ids:
                    tool_ids.append(tid)
        else:
            unit = next(u for u in units if u["id"] == unit_id)
            strategy = (
                f"provide {unit.get('target_object') or unit_id} input covering "
                + ", ".join(matched[unit_id])
            )
            tool_ids = []
        selections.append({"unit_id": unit_id, "strategy": strategy, "tool_ids": tool_ids})

    gran = _target_granularity(query) if query else None
    parts = []
    if gran:
        parts.append(f"align outputs to {gran} granularity")
    active = [s for s in selections if s["tool_ids"]]
    if len(active) > 1:
        parts.append("join components on shared key fields")
    parts.append("assemble outputs as one table")
    integration = "; ".join(parts)
    return {
        "unit_selections": selections,
        "integration_strategy": integration,
        "provenance": {"kind": "generated", "case_id": None},
    }


def _substitute_object(text: str, old_kw: str, new_obj: str) -> str:
    if not old_kw or not new_obj:
        return text
    old_sing = tu.singularize(old_kw.lower())
    out = []
    for raw in re.split(r"(\W+)", text):
        if raw and re.match(r"^\w+$", raw) and tu.singularize(raw.lower()) == old_sing:
            out.append(new_obj)
        else:
            out.append(raw)
    return "".join(out)


def adapt_plan_payload(ctx: dict) -> dict:
    case = ctx["case"]
    req = ctx["requirement"]
    units = ctx.get("units", [])
    objective = req.get("objective", "")

    selections = []
    findings = []
    keywords = [
        b.get("archetype", {}).get("object_keyword", "")
        for b in case.get("unit_bindings", [])
        if b.get("archetype")
    ]
    for binding in case.get("unit_bindings", []):
        strategy = binding.get("strategy", "")
        for kw in keywords:
            strategy = _substitute_object(strategy, kw, objective)
        unit_id = binding.get("unit_id")
        if unit_id and not any(u["id"] == unit_id for u in units):
            unit_id = None
        if unit_id is None and binding.get("archetype"):
            arch = binding["archetype"]
            req_fields = {f.lower() for f in arch.get("required_fields", [])}
            obj_toks = {tu.singularize(t) for t in tu.content_tokens(objective)} | {
                tu.singularize(t) for t in tu.content_tokens(arch.get("object_keyword", ""))
            }
            candidates = []
            for u in units:
                if u.get("modality") != arch.get("modality"):
                    continue
                if not req_fields <= {f.lower() for f in u.get("fields", [])}:
                    continue
                if obj_toks and not (obj_toks & _unit_tokens(u)):
                    continue
                candidates.append(u["id"])
            unit_id = min(candidates) if candidates else None
        if unit_id is None:
            findings.append({
                "dimension": "coverage_completeness",
                "message": f"no unit in the data lake matches binding {binding.get('archetype') or binding.get('unit_id')!r}",
            })
            continue
        selections.append({
            "unit_id": unit_id,
            "strategy": strategy,
            "tool_ids": list(binding.get("tool_ids", [])),
        })

    if not selections:
        return {"error": "no_bindable_units"}

    integration = case.get("integration_description", "")
    for kw in keywords:
        integration = _substitute_object(integration, kw, objective)
    return {
        "unit_selections": selections,
        "integration_strategy": integration,
        "provenance": {"kind": "adapted", "case_id": case.get("id")},
        "findings": findings,
    }


def revise_plan_payload(ctx: dict) -> dict:
    plan = ctx["plan"]
    req = ctx["requirement"]
    units = ctx.get("units", [])
    tools = ctx.get("tools", [])
    selections = [dict(s) for s in plan.get("unit_selections", [])]
    integration = plan.get("integration_strategy", "")
    chosen = {s["unit_id"] for s in selections}

    for finding in ctx.get("findings", []):
        dim = finding.get("dimension")
        msg = finding.get("message", "")
        if dim == "coverage_completeness":
            m = re.search(r"variable '([^']+)'", msg)
            wanted = m.group(1) if m else None
            if wanted:
                for unit in sorted(units, key=lambda u: u["id"]):
                    if unit["id"] in chosen:
                        continue
                    if _variable_matches(wanted, unit):
                        selections.append({
                            "unit_id": unit["id"],
                            "strategy": f"prepare {unit.get('target_object') or unit['id']} covering {wanted}",
                            "tool_ids": [],
                        })
                        chosen.add(unit["id"])
                        break
        elif dim == "requirement_alignment":
            obj = req.get("objective", "")
            if selections and obj:
                if obj.lower() not in selections[0]["strategy"].lower():
                    selections[0]["strategy"] = f"{obj}: " + selections[0]["strategy"]
        elif dim == "logical_correctness":
            grans = re.findall(r"\b(hourly|daily|monthly|yearly)\b", msg)
            coarse = tu.coarsest_granularity(grans) or "daily"
            if "aggregate" not in integration:
                integration = (integration + f"; aggregate to {coarse} granularity").strip("; ")
            agg_tool, _ = best_tool_for_clause("aggregate average", tools)
            if agg_tool and selections and agg_tool not in selections[0]["tool_ids"]:
                selections[0]["tool_ids"].append(agg_tool)

    return {
        "unit_selections": selections,
        "integration_strategy": integration,
        "provenance": plan.get("provenance", {"kind": "generated", "case_id": None}),
    }


_GRAN_WORD = r"(hourly|daily|monthly|yearly|hour|day|month|year|annual)"
_GRAN_CANON = {
    "hour": "hourly", "hourly": "hourly", "day": "daily", "daily": "daily",
    "month": "monthly", "monthly": "monthly", "year": "yearly",
    "yearly": "yearly", "annual": "yearly",
}


def extract_constraints_payload(ctx: dict) -> dict:
    strategy = ctx.get("strategy", "")
    components = ctx.get("components", [])
    low = strategy.lower()
    all_fields = {f.lower() for comp in components for f in comp.get("fields", [])}
    constraints: list[dict] = []

    # temporal synchronization
    gran = None
    m = re.search(r"\bto\s+" + _GRAN_WORD, low)
    if m:
        gran = _GRAN_CANON[m.group(1)]
    elif re.search(r"\balign\b", low) or "granularity" in low or "time" in low:
        grans = tu.granularity_words(low)
        if grans:
            gran = tu.coarsest_granularity(grans) if len(grans) > 1 else grans[0]
    if gran is None and re.search(r"\balign by time\b", low):
        comp_grans = [c.get("granularity") for c in components if c.get("granularity")]
        gran = tu.coarsest_granularity(comp_grans)
    if gran:
        for comp in components:
            cg = comp.get("granularity")
            if cg and tu.GRANULARITY_RANK.get(cg, 0) > tu.GRANULARITY_RANK[gran]:
                return {"error": f"cannot synchronize to {gran}: component "
                                 f"{comp.get('name')} is {cg} (coarser)"}
        constraints.append({
            "relation": "temporal_synchronization",
            "relation_params": {"granularity": gran},
            "structure": None,
            "structure_params": {},
        })

    # schema mapping / joins
    m = re.search(r"\bjoin(?:\s+\w+)*\s+on\s+([\w ,]+)", low)
    if m:
        keys = [k.strip() for k in re.split(r",| and ", m.group(1)) if k.strip()]
        keys = [k.split()[0] for k in keys]
        missing = [k for k in keys if k not in all_fields]
        if missing:
            return {"error": f"join keys absent from all units: {missing}"}
        constraints.append({
            "relation": "schema_mapping",
            "relation_params": {"keys": keys},
            "structure": None,
            "structure_params": {},
        })
    elif "same entity" in low or re.search(r"\bmap\b.*\bschema\b", low):
        constraints.append({
            "relation": "schema_mapping",
            "relation_params": {"keys": []},
            "structure": None,
            "structure_params": {},
        })

    if "ontology" in low or "synonym" in low:
        constraints.append({
            "relation": "ontology_alignment",
            "relation_params": {"dictionary": "default"},
            "structure": None,
            "structure_params": {},
        })
    elif "semantic" in low or "correspond" in low:
        constraints.append({
            "relation": "semantic_correspondence",
            "relation_params": {},
            "structure": None,
            "structure_params": {},
        })

    # required output structure
    structure = None
    if re.search(r"\b(one|single) table\b", low) or "tabular" in low or "as one table" in low:
        structure = "tabular"
    elif "graph" in low:
        structure = "graph"
    elif "tensor" in low:
        structure = "tensor"
    if structure is None and components and all(
        c.get("modality", "tabular") == "tabular" for c in components
    ):
        structure = "tabular"

    required_columns: list[str] = []
    m = re.search(r"with columns? ([\w ,]+)", low)
    if m:
        required_columns = [c.strip() for c in re.split(r",| and ", m.group(1)) if c.strip()]
        missing = [c for c in required_columns if c not in all_fields]
        if missing:
            return {"error": f"required columns absent from all units: {missing}"}

    if structure:
        params: dict = {"required_columns": required_columns}
        if gran:
            params["key_field"] = "date" if gran in ("daily", "monthly", "yearly") else "time"
        constraints.append({
            "relation": None,
            "relation_params": {},
            "structure": structure,
            "structure_params": params,
        })

    if not constraints:
        return {"error": "no integration constraints recognized in strategy"}
    return {"constraints": constraints}


def summarize_analysis_payload(ctx: dict) -> dict:
    lines = [f"Processed {len(ctx.get('per_unit', []))} unit(s) for: {ctx.get('query', '')}"]
    for entry in ctx.get("per_unit", []):
        lines.append(
            f"- {entry.get('unit_id')}: {entry.get('row_count', 0)} rows across "
            f"{len(entry.get('artifacts', []))} artifact(s)"
        )
    lines.append("All declared outputs were produced and verified.")
    return {"summary": "\n".join(lines)}


class DeterministicBackend(PlannerBackend):
    """Pure rule-based oracle; a function of the request and nothing else."""

    name = "deterministic"

    def complete(self, req: BackendRequest) -> BackendResponse:
        req.validate()
        ctx = req.context
        if req.role == Role.REQUIREMENT_ANALYSIS:
            payload = analyze_query(ctx["query"])
        elif req.role == Role.SCRIPT_SYNTHESIS:
            kind = ctx.get("kind", "table")
            body = SCRIPTS_BY_KIND.get(kind)
            if body is None:
                payload = {"script": "", "error": f"no template for kind {kind!r}"}
            else:
                payload = {"script": body}
        elif req.role == Role.PLAN_ADAPTATION:
            payload = adapt_plan_payload(ctx)
        elif req.role == Role.PLAN_GENERATION:
            payload = generate_plan_payload(ctx)
        elif req.role == Role.PLAN_REVIEW_FEEDBACK:
            payload = revise_plan_payload(ctx)
        elif req.role == Role.PROGRAM_SYNTHESIS:
            payload = {"driver": ctx["driver_skeleton"]}
        elif req.role == Role.PROGRAM_REPAIR:
            # deterministic repair re-emits the driver; injected/transient
            # faults clear on retry, persistent ones exhaust the budget
            payload = {"driver": ctx["driver"]}
        elif req.role == Role.CONSTRAINT_EXTRACTION:
            payload = extract_constraints_payload(ctx)
        elif req.role == Role.ANALYSIS_SUMMARY:
            payload = summarize_analysis_payload(ctx)
        else:  # pragma: no cover
            raise MalformedResponse(f"unknown role: {req.role}")
        return BackendResponse(payload=payload, diagnostics=f"deterministic:{req.role.value}")


# --------------------------------------------------------------------------
# scripted backend
# --------------------------------------------------------------------------

class ScriptedBackend(PlannerBackend):
    """Replays a recorded response sequence; call i gets entry i, exactly.

    Entries are ``{"role": <role>, "payload": {...}}``; a declared role must
    match the incoming request. Calls beyond the script length raise.
    """

    name = "scripted"

    def __init__(self, entries: list[dict]):
        self._entries = list(entries)
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Path | str) -> "ScriptedBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def calls_made(self) -> int:
        return self._cursor

    def complete(self, req: BackendRequest) -> BackendResponse:
        req.validate()
        with self._lock:
            if self._cursor >= len(self._entries):
                raise ScriptExhausted(
                    f"scripted backend got call #{self._cursor + 1} but has only "
                    f"{len(self._entries)} recorded responses (role={req.role.value})"
                )
            entry = self._entries[self._cursor]
            self._cursor += 1
        declared = entry.get("role")
        if declared is not None and declared != req.role.value:
            raise ScriptExhausted(
                f"scripted entry #{self._cursor} is for role {declared!r}, "
                f"but the call was {req.role.value!r}"
            )
        return BackendResponse(payload=entry.get("payload", {}), diagnostics=f"scripted:{self._cursor}")


# --------------------------------------------------------------------------
# remote backend
# --------------------------------------------------------------------------

_SYSTEM_PREAMBLES = {
    Role.REQUIREMENT_ANALYSIS: (
        "Extract a structured requirement from the scientific query. Respond with a "
        "single JSON object: {objective, variables, constraints, task_kind}."
    ),
    Role.SCRIPT_SYNTHESIS: (
        "Write a standalone python exploration script for the described file. It must "
        "print one JSON descriptor {fields, row_count, sample_rows} to stdout. "
        "Respond with JSON: {script}."
    ),
    Role.PLAN_ADAPTATION: (
        "Adapt the given solved case to the new requirement. Respond with JSON: "
        "{unit_selections, integration_strategy, provenance, findings}."
    ),
    Role.PLAN_GENERATION: (
        "Generate a per-unit processing plan. Respond with JSON: "
        "{unit_selections, integration_strategy, provenance}."
    ),
    Role.PLAN_REVIEW_FEEDBACK: (
        "Revise the plan to resolve the review findings. Respond with JSON: "
        "{unit_selections, integration_strategy, provenance}."
    ),
    Role.PROGRAM_SYNTHESIS: "Produce the runnable driver document. Respond with JSON: {driver}.",
    Role.PROGRAM_REPAIR: (
        "The previous program failed; produce a repaired driver document. "
        "Respond with JSON: {driver}."
    ),
    Role.CONSTRAINT_EXTRACTION: (
        "Convert the integration strategy into explicit constraints. Respond with "
        "JSON: {constraints: [{relation, relation_params, structure, structure_params}]}."
    ),
    Role.ANALYSIS_SUMMARY: "Summarize the run results. Respond with JSON: {summary}.",
}


class RemoteBackend(PlannerBackend):
    """JSON-over-HTTP chat-completion backend with audit logging."""

    name = "remote"

    def __init__(
        self,
        endpoint: str,
        api_key: str = "",
        model: str = "default",
        timeout_s: float = 30.0,
        validation_retries: int = 2,
        log_dir: Path | str | None = None,
        max_in_flight: int = 4,
    ):
        self.endpoint = endpoint
        self.api_key = api_key
        self.model = model
        self.timeout_s = timeout_s
        self.validation_retries = validation_retries
        self.log_dir = Path(log_dir) if log_dir else None
        self._sema = threading.BoundedSemaphore(max_in_flight)
        self._seq = 0
        self._lock = threading.Lock()

    def _log(self, kind: str, doc: dict) -> None:
        if self.log_dir is None:
            return
        self.log_dir.mkdir(parents=True, exist_ok=True)
        with self._lock:
            self._seq += 1
            n = self._seq
        path = self.log_dir / f"backend-{n:04d}-{kind}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")

    def _call_once(self, req: BackendRequest) -> dict:
        import requests

        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": _SYSTEM_PREAMBLES[req.role]},
                {"role": "user", "content": json.dumps(
                    {"role": req.role.value, "context": req.context, "attempt": req.attempt},
                    sort_keys=True, default=str,
                )},
            ],
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        self._log("req", body)
        try:
            resp = requests.post(self.endpoint, json=body, headers=headers, timeout=self.timeout_s)
        except requests.Timeout as exc:
            raise BackendTimeout(f"remote backend timed out after {self.timeout_s}s") from exc
        except requests.ConnectionError as exc:
            raise BackendUnavailable(f"remote backend unreachable: {exc}") from exc
        if resp.status_code >= 500:
            raise BackendUnavailable(f"remote backend returned {resp.status_code}")
        if resp.status_code != 200:
            raise MalformedResponse(f"remote backend returned {resp.status_code}: {resp.text[:500]}")
        doc = resp.json()
        self._log("resp", doc)
        try:
            content = doc["choices"][0]["message"]["content"]
            payload = json.loads(content)
        except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
            raise MalformedResponse(f"unparseable remote response: {exc}") from exc
        return payload

    def complete(self, req: BackendRequest) -> BackendResponse:
        req.validate()
        with self._sema:
            last: Exception | None = None
            for attempt in range(1 + self.validation_retries):
                try:
                    payload = self._call_once(req)
                except MalformedResponse as exc:
                    last = exc
                    continue
                if payload_is_well_formed(req.role, payload):
                    return BackendResponse(payload=payload, diagnostics=f"remote:attempt{attempt + 1}")
                last = MalformedResponse(
                    f"remote payload failed schema validation for role {req.role.value}"
                )
            raise last if last else MalformedResponse("remote backend produced no valid payload")


def make_backend(
    spec: str,
    log_dir: Path | str | None = None,
    endpoint: str = "",
    api_key: str = "",
    model: str = "",
) -> PlannerBackend:
    """Build a backend from a spec string: deterministic | scripted:<path> | remote.

    Remote settings come from the arguments when given (config-file values),
    with environment variables as the fallback.
    """
    import os

    if spec == "deterministic":
        return DeterministicBackend()
    if spec.startswith("scripted:"):
        return ScriptedBackend.from_file(spec.split(":", 1)[1])
    if spec == "remote":
        endpoint = endpoint or os.environ.get("SCIFORGE_REMOTE_ENDPOINT", "")
        if not endpoint:
            raise BackendUnavailable(
                "remote backend needs an endpoint (SCIFORGE_REMOTE_ENDPOINT or config)"
            )
        return RemoteBackend(
            endpoint=endpoint,
            api_key=api_key or os.environ.get("SCIFORGE_REMOTE_KEY", ""),
            model=model or os.environ.get("SCIFORGE_REMOTE_MODEL", "default"),
            log_dir=log_dir,
        )
    raise ValueError(f"unknown backend spec: {spec!r}")

"""Data processing agent: refine -> check -> synthesize -> execute/repair ->
analyze, as an explicit state machine over one shared run state.

The runnable program is a declarative driver document (ordered tool
invocations with resolved bindings) interpreted by this engine; execution and
synthesis form a closed loop in which every failure's stderr feeds the next
program revision, and independent units fan out to a bounded worker pool.
"""

from __future__ import annotations

import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import textutil as tu
from .backends import BackendRequest, PlannerBackend, Role, payload_is_well_formed
from .errors import (
    BackendFailure,
    CyclicDependency,
    NoToolForStrategy,
    RepairBudgetExhausted,
)
from .intent_parsing import Plan
from .knowledge_base import KnowledgeBase, Modality, ToolDescriptor
from .sandbox import Sandbox, run_tool
from .workspace import Workspace, snapshot

DEFAULT_REFINE_ROUNDS = 3
DEFAULT_REPAIR_BUDGET = 5
DEFAULT_CONCURRENCY = 2

_BYTES_PER_ROW = 1024  # coarse feasibility model


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


# --- types -------------------------------------------------------------------

@dataclass
class Feasibility:
    est_rows: int
    memory_hint_mb: int | None
    est_runtime_s: float

    def to_dict(self) -> dict:
        return {
            "est_rows": self.est_rows,
            "memory_hint_mb": self.memory_hint_mb,
            "est_runtime_s": self.est_runtime_s,
        }


@dataclass
class PipelineStep:
    tool_id: str
    params: dict = field(default_factory=dict)
    aux_unit_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"tool_id": self.tool_id, "params": self.params, "aux_unit_ids": list(self.aux_unit_ids)}


@dataclass
class RefinedPipeline:
    unit_id: str
    steps: list[PipelineStep] = field(default_factory=list)
    feasibility: Feasibility = field(default_factory=lambda: Feasibility(0, None, 0.0))
    status: str = "draft"  # draft | checked | rejected
    reject_reasons: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "steps": [s.to_dict() for s in self.steps],
            "feasibility": self.feasibility.to_dict(),
            "status": self.status,
            "reject_reasons": list(self.reject_reasons),
        }


@dataclass
class ProgramArtifact:
    revision: int
    body: str
    parent_revision: int | None = None
    context: dict = field(default_factory=dict)
    path: str | None = None

    def driver(self) -> dict:
        return json.loads(self.body)


@dataclass
class ProcessedUnit:
    unit_id: str
    artifacts: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"unit_id": self.unit_id, "artifacts": list(self.artifacts), "stats": self.stats}


@dataclass
class ProcessedOutputs:
    O: list[ProcessedUnit] = field(default_factory=list)
    V: list[str] = field(default_factory=list)
    A: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"O": [u.to_dict() for u in self.O], "V": list(self.V), "A": self.A}


@dataclass
class AgentState:
    query: str
    task_kind: str
    dataset_refs: dict
    initial_plan: Plan
    workspace: str
    refined_pipelines: list[RefinedPipeline] = field(default_factory=list)
    programs: list[ProgramArtifact] = field(default_factory=list)
    refine_iterations: int = 0
    exec_iterations: int = 0
    recorded_errors: list[dict] = field(default_factory=list)
    outputs: ProcessedOutputs = field(default_factory=ProcessedOutputs)
    success: bool = False

    @property
    def program(self) -> ProgramArtifact | None:
        return self.programs[-1] if self.programs else None

    def record_error(self, phase: str, message: str) -> None:
        self.recorded_errors.append({"phase": phase, "message": message})

    def check_invariants(self, refine_budget: int, repair_budget: int) -> None:
        if self.refine_iterations > refine_budget or self.exec_iterations > repair_budget:
            raise AssertionError("iteration counters exceeded their budgets")
        if self.success and not self.outputs.O:
            raise AssertionError("success flagged with empty O")
        for err in self.recorded_errors:
            if not err.get("phase"):
                raise AssertionError("recorded error lacks a phase")


@dataclass
class AnalysisReport:
    kind: str
    query: str
    per_unit: list[dict]
    summary: str
    visualizations: list[str]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "query": self.query,
            "per_unit": self.per_unit,
            "summary": self.summary,
            "visualizations": list(self.visualizations),
        }


@dataclass
class FailureReport:
    kind: str
    query: str
    phase: str
    reason: str
    last_error: str
    trace: list[dict]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "query": self.query,
            "phase": self.phase,
            "reason": self.reason,
            "last_error": self.last_error,
            "trace": self.trace,
        }


@dataclass
class ProcessingLimits:
    refine_rounds: int = DEFAULT_REFINE_ROUNDS
    repair_budget: int = DEFAULT_REPAIR_BUDGET
    concurrency: int = DEFAULT_CONCURRENCY


# --- refinement ---------------------------------------------------------------

_OUT_NAME_DIR_TAGS = {"split", "align_temporal"}


def _step_output_name(tool: ToolDescriptor) -> str:
    if set(tool.capability_tags) & _OUT_NAME_DIR_TAGS:
        return "out"
    return "out.csv"


def _find_aux_header_unit(plan: Plan, kb: KnowledgeBase, current_unit: str) -> str | None:
    for sel in plan.unit_selections:
        if sel.unit_id == current_unit:
            continue
        unit = kb.unit(sel.unit_id)
        if unit is None:
            continue
        toks = set(tu.content_tokens(unit.target_object)) | set(
            tu.content_tokens(Path(unit.path).name.replace("_", " ").replace("-", " ").replace(".", " "))
        )
        if "header" in toks or "headers" in toks:
            return sel.unit_id
    return None


def _infer_params(
    tool: ToolDescriptor, clause: str, plan: Plan, prior_steps: list[PipelineStep]
) -> dict:
    tags = set(tool.capability_tags)
    params: dict = {}
    if "aggregate" in tags:
        grans = tu.granularity_words(clause)
        target = tu.coarsest_granularity(grans) if len(grans) > 1 else (grans[0] if grans else None)
        params["granularity"] = target or "daily"
    if "split" in tags:
        gran = next((s.params["granularity"] for s in reversed(prior_steps)
                     if s.params.get("granularity")), None)
        if gran:
            key = {"hourly": "time", "daily": "date", "monthly": "month", "yearly": "year"}[gran]
            params["time_field"] = key
    return params


def refine_plan(
    plan: Plan,
    kb: KnowledgeBase,
    backend: PlannerBackend,
    feedback: list[str] | None = None,
) -> list[RefinedPipeline]:
    """Ground each unit strategy into a tool-step sequence with parameters.

    Tool choice consults the plan's proposed tool ids first, then the case
    lake's recorded pipelines, then capability matching against the clause.
    Raises :class:`NoToolForStrategy` when an action clause matches nothing.
    """
    snap = kb.snapshot()
    tools = {t.descriptor.id: t.descriptor for t in snap.tool_lake}
    tool_dicts = [
        {"id": t.descriptor.id, "capability": t.descriptor.capability,
         "tags": list(t.descriptor.capability_tags)}
        for t in snap.tool_lake
    ]
    from .backends import best_tool_for_clause

    case_sequences: dict[str, list[str]] = {}
    if plan.provenance.kind == "adapted" and plan.provenance.case_id:
        case = kb.case(plan.provenance.case_id)
        if case:
            for binding, sel in zip(case.unit_bindings, plan.unit_selections):
                if binding.tool_ids:
                    case_sequences[sel.unit_id] = list(binding.tool_ids)

    pipelines = []
    for sel in plan.unit_selections:
        unit = kb.unit(sel.unit_id)
        row_count = unit.descriptor.quality.row_count if unit else 0
        steps: list[PipelineStep] = []
        clauses = tu.split_clauses(sel.strategy)
        action_clauses = [c for c in clauses if set(tu.tokens(c)) & tu.ACTION_VERBS]

        ordered_tool_ids: list[tuple[str, str]] = []  # (tool_id, clause)
        if sel.tool_ids and len(sel.tool_ids) >= len(action_clauses):
            for i, tid in enumerate(sel.tool_ids):
                clause = action_clauses[i] if i < len(action_clauses) else sel.strategy
                ordered_tool_ids.append((tid, clause))
        elif sel.unit_id in case_sequences:
            for tid in case_sequences[sel.unit_id]:
                ordered_tool_ids.append((tid, sel.strategy))
        else:
            for clause in action_clauses:
                tid, score = best_tool_for_clause(clause, tool_dicts)
                if tid is None or score == 0:
                    raise NoToolForStrategy(
                        f"no tool in the lake matches strategy clause {clause!r}"
                    )
                ordered_tool_ids.append((tid, clause))

        for tid, clause in ordered_tool_ids:
            tool = tools.get(tid)
            if tool is None:
                raise NoToolForStrategy(
                    f"strategy for {sel.unit_id!r} names unknown tool {tid!r}"
                )
            step = PipelineStep(tool_id=tid, params=_infer_params(tool, clause, plan, steps))
            if len(tool.input_contract) > 1:
                aux = _find_aux_header_unit(plan, kb, sel.unit_id)
                if aux:
                    step.aux_unit_ids = [aux]
            steps.append(step)

        mem_hints = [tools[s.tool_id].memory_hint_mb for s in steps
                     if s.tool_id in tools and tools[s.tool_id].memory_hint_mb]
        pipelines.append(RefinedPipeline(
            unit_id=sel.unit_id,
            steps=steps,
            feasibility=Feasibility(
                est_rows=row_count,
                memory_hint_mb=min(mem_hints) if mem_hints else None,
                est_runtime_s=max(0.01, row_count * 2e-6) if steps else 0.0,
            ),
        ))
    return pipelines


# --- checking ------------------------------------------------------------------

@dataclass
class CheckVerdict:
    unit_id: str
    ok: bool
    reasons: list[str] = field(default_factory=list)
    suggestions: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id, "ok": self.ok,
            "reasons": list(self.reasons), "suggestions": list(self.suggestions),
        }


def check_plan(pipelines: list[RefinedPipeline], kb: KnowledgeBase) -> list[CheckVerdict]:
    """Technical review: tool existence, contract chaining, resource feasibility."""
    snap = kb.snapshot()
    tools = {t.descriptor.id: t.descriptor for t in snap.tool_lake}
    verdicts = []
    for pipe in pipelines:
        reasons: list[str] = []
        suggestions: list[str] = []
        unit = kb.unit(pipe.unit_id)
        if unit is None:
            reasons.append(f"unknown unit {pipe.unit_id!r}")
        prev_out_modality: Modality | None = (
            unit.descriptor.modality if unit else None
        )
        terminal = False
        for i, step in enumerate(pipe.steps):
            tool = tools.get(step.tool_id)
            if tool is None:
                reasons.append(f"step {i + 1} names unknown tool {step.tool_id!r}")
                continue
            if terminal:
                reasons.append(
                    f"step {i + 1} ({step.tool_id}) follows a partitioning step; "
                    "split outputs cannot be chained"
                )
                suggestions.append("move the split step to the end of the pipeline")
            in_modality = tool.input_contract[0].modality
            if prev_out_modality is not None and in_modality != prev_out_modality:
                reasons.append(
                    f"step {i + 1} ({step.tool_id}) expects {in_modality.value} input "
                    f"but receives {prev_out_modality.value}"
                )
                suggestions.append(f"insert a conversion step before {step.tool_id}")
            prev_out_modality = tool.output_contract[0].modality
            if set(tool.capability_tags) & {"split"}:
                terminal = True
            if len(tool.input_contract) > 1 and not step.aux_unit_ids:
                reasons.append(
                    f"step {i + 1} ({step.tool_id}) needs {len(tool.input_contract)} inputs "
                    "but no auxiliary unit was bound"
                )
                suggestions.append("bind the auxiliary input unit in the plan")

        if pipe.feasibility.memory_hint_mb is not None:
            est_mb = pipe.feasibility.est_rows * _BYTES_PER_ROW / 1e6
            if est_mb > pipe.feasibility.memory_hint_mb:
                reasons.append(
                    f"estimated working set {est_mb:.0f} MB exceeds the "
                    f"memory hint {pipe.feasibility.memory_hint_mb} MB"
                )
                suggestions.append("stream or chunk the unit, or raise the memory hint")

        pipe.status = "checked" if not reasons else "rejected"
        pipe.reject_reasons = reasons
        verdicts.append(CheckVerdict(pipe.unit_id, not reasons, reasons, suggestions))
    return verdicts


# --- program synthesis -----------------------------------------------------------

def _resolve_driver(
    pipelines: list[RefinedPipeline], kb: KnowledgeBase, revision: int
) -> dict:
    """Build the declarative driver: ordered tool invocations with concrete paths.

    Paths under the workspace are relative to its root; raw source files keep
    their absolute paths.
    """
    units = []
    for pipe in pipelines:
        unit = kb.unit(pipe.unit_id)
        unit_slug = _slug(pipe.unit_id)
        current = unit.path if unit else ""
        steps = []
        for j, step in enumerate(pipe.steps, start=1):
            tool = kb.tool(step.tool_id)
            out_dir = f"outputs/{unit_slug}/s{j}-{_slug(step.tool_id)}"
            out_path = f"{out_dir}/{_step_output_name(tool)}"
            inputs = []
            for aux_id in step.aux_unit_ids:
                aux = kb.unit(aux_id)
                if aux:
                    inputs.append(aux.path)
            inputs.append(current)
            steps.append({
                "tool_id": step.tool_id,
                "inputs": inputs,
                "params": step.params,
                "outputs": [out_path],
            })
            current = out_path
        units.append({"unit_id": pipe.unit_id, "steps": steps})
    driver = {"revision": revision, "units": units}
    stages = schedule_units(driver, max(1, len(units)))
    driver["parallelizable"] = bool(stages) and len(stages[0]) > 1
    return driver


def validate_driver(driver: dict, kb: KnowledgeBase) -> None:
    if not isinstance(driver, dict) or "units" not in driver:
        raise BackendFailure("driver document malformed: missing units")
    for u in driver["units"]:
        for s in u.get("steps", []):
            if kb.tool(s["tool_id"]) is None:
                raise BackendFailure(f"driver names unknown tool {s['tool_id']!r}")
            for key in ("inputs", "params", "outputs"):
                if key not in s:
                    raise BackendFailure(f"driver step missing {key!r}")


def synthesize_program(
    pipelines: list[RefinedPipeline],
    state: AgentState,
    kb: KnowledgeBase,
    backend: PlannerBackend,
    workspace: Workspace | None = None,
    last_error: str = "",
) -> ProgramArtifact:
    """One driver program covering every checked pipeline; persisted as a new
    revision before any execution."""
    if any(p.status != "checked" for p in pipelines):
        raise BackendFailure("cannot synthesize a program from unchecked pipelines")
    revision = (state.program.revision + 1) if state.program else 1
    skeleton = _resolve_driver(pipelines, kb, revision)
    resp = backend.complete(BackendRequest(
        role=Role.PROGRAM_SYNTHESIS,
        context={
            "driver_skeleton": skeleton,
            "pipelines": [p.to_dict() for p in pipelines],
            "last_error": last_error,
            "revision": revision,
        },
    ))
    if not payload_is_well_formed(Role.PROGRAM_SYNTHESIS, resp.payload):
        raise BackendFailure("program synthesis returned no driver")
    driver = resp.payload["driver"]
    validate_driver(driver, kb)
    artifact = ProgramArtifact(
        revision=revision,
        body=json.dumps(driver, sort_keys=True, indent=2) + "\n",
        parent_revision=state.program.revision if state.program else None,
        context={"plan_revision": state.initial_plan.revision, "last_error": last_error},
    )
    _persist_program(artifact, workspace)
    state.programs.append(artifact)
    return artifact


def _persist_program(artifact: ProgramArtifact, workspace: Workspace | None) -> None:
    if workspace is None:
        return
    path = workspace.dir("programs") / f"driver.rev{artifact.revision}.json"
    path.write_text(artifact.body, encoding="utf-8")
    artifact.path = str(path)


# --- scheduling -------------------------------------------------------------------

def _unit_io_sets(driver_unit: dict) -> tuple[set[str], set[str]]:
    ins: set[str] = set()
    outs: set[str] = set()
    for step in driver_unit.get("steps", []):
        for i in step.get("inputs", []):
            if i not in outs:  # intra-unit chaining is not a cross-unit edge
                ins.add(i)
        outs.update(step.get("outputs", []))
    return ins, outs


def schedule_units(driver: dict, concurrency: int) -> list[list[str]]:
    """Group units into execution stages: disjoint-IO units share a stage.

    Units are independent iff their input and declared output path sets are
    disjoint; producer->consumer overlaps order the producer first, other
    overlaps serialize deterministically by unit id.
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    units = driver.get("units", [])
    ios = {u["unit_id"]: _unit_io_sets(u) for u in units}
    ids = sorted(ios)

    edges: dict[str, set[str]] = {uid: set() for uid in ids}
    for a in ids:
        for b in ids:
            if a >= b:
                continue
            a_in, a_out = ios[a]
            b_in, b_out = ios[b]
            a_feeds_b = bool(a_out & b_in)
            b_feeds_a = bool(b_out & a_in)
            if a_feeds_b and b_feeds_a:
                raise CyclicDependency(f"units {a!r} and {b!r} consume each other's outputs")
            if a_feeds_b:
                edges[a].add(b)
            elif b_feeds_a:
                edges[b].add(a)
            elif (a_out & b_out) or (a_in & b_in):
                edges[a].add(b)  # shared artifact or input: serialize by id

    indeg = {uid: 0 for uid in ids}
    for src, dsts in edges.items():
        for d in dsts:
            indeg[d] += 1
    stages: list[list[str]] = []
    ready = sorted(uid for uid in ids if indeg[uid] == 0)
    seen = 0
    while ready:
        # chunk each dependency level so no stage exceeds the concurrency cap
        for i in range(0, len(ready), concurrency):
            stages.append(ready[i:i + concurrency])
        seen += len(ready)
        nxt: set[str] = set()
        for uid in ready:
            for d in edges[uid]:
                indeg[d] -= 1
                if indeg[d] == 0:
                    nxt.add(d)
        ready = sorted(nxt)
    if seen != len(ids):
        raise CyclicDependency("dependency graph contains a cycle")
    return stages


# --- execution with repair -----------------------------------------------------------

@dataclass
class StepResult:
    unit_id: str
    step_index: int
    tool_id: str
    ok: bool
    exit_code: int
    error_excerpt: str = ""
    outputs: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id, "step_index": self.step_index,
            "tool_id": self.tool_id, "ok": self.ok, "exit_code": self.exit_code,
            "error_excerpt": self.error_excerpt, "outputs": list(self.outputs),
        }


def _resolve_path(path: str, ws_root: Path) -> str:
    p = Path(path)
    return str(p) if p.is_absolute() else str(ws_root / p)


def _task_path(abs_path: str, workdir: Path, ws_root: Path) -> str:
    # workspace-internal paths go into task.json relative to the tool workdir
    # so the document bytes are identical across runs; external sources stay
    # absolute
    if abs_path.startswith(str(ws_root) + os.sep):
        return os.path.relpath(abs_path, workdir)
    return abs_path


def _run_unit_steps(
    driver_unit: dict,
    kb: KnowledgeBase,
    sandbox: Sandbox,
    ws_root: Path,
    attempt: int,
) -> list[StepResult]:
    results = []
    unit_slug = _slug(driver_unit["unit_id"])
    for j, step in enumerate(driver_unit.get("steps", []), start=1):
        tool = kb.tool(step["tool_id"])
        workdir = ws_root / "logs" / "sandbox" / f"attempt{attempt}" / unit_slug / f"s{j}"
        abs_inputs = [_resolve_path(i, ws_root) for i in step["inputs"]]
        abs_outputs = [_resolve_path(o, ws_root) for o in step["outputs"]]
        rel_inputs = [_task_path(i, workdir, ws_root) for i in abs_inputs]
        rel_outputs = [os.path.relpath(o, workdir) for o in abs_outputs]
        outcome = run_tool(
            sandbox=sandbox,
            command=tool.command,
            workdir=workdir,
            inputs=rel_inputs,
            params=step.get("params", {}),
            outputs=rel_outputs,
            timeout_s=tool.timeout_s,
            label=f"{driver_unit['unit_id']}:{step['tool_id']}",
        )
        produced = []
        for o in outcome.outputs:
            resolved = (workdir / o).resolve() if not Path(o).is_absolute() else Path(o)
            try:
                produced.append(str(resolved.relative_to(ws_root.resolve())))
            except ValueError:
                produced.append(str(resolved))
        results.append(StepResult(
            unit_id=driver_unit["unit_id"],
            step_index=j,
            tool_id=step["tool_id"],
            ok=outcome.ok,
            exit_code=outcome.result.exit_code,
            error_excerpt="" if outcome.ok else outcome.result.failure_excerpt(),
            outputs=produced,
        ))
        if not outcome.ok:
            break
    return results


def _execute_driver(
    driver: dict,
    kb: KnowledgeBase,
    sandbox: Sandbox,
    ws_root: Path,
    concurrency: int,
    attempt: int,
) -> tuple[bool, list[StepResult]]:
    stages = schedule_units(driver, concurrency)
    by_id = {u["unit_id"]: u for u in driver.get("units", [])}
    all_results: list[StepResult] = []
    failed = False
    for stage in stages:
        if failed:
            break
        if len(stage) == 1 or concurrency == 1:
            stage_results = [
                _run_unit_steps(by_id[uid], kb, sandbox, ws_root, attempt) for uid in stage
            ]
        else:
            with ThreadPoolExecutor(max_workers=min(concurrency, len(stage))) as pool:
                futures = [
                    pool.submit(_run_unit_steps, by_id[uid], kb, sandbox, ws_root, attempt)
                    for uid in stage
                ]
                stage_results = [f.result() for f in futures]
        for results in stage_results:
            all_results.extend(results)
            if any(not r.ok for r in results):
                failed = True
    return (not failed, all_results)


def execute_with_repair(
    program: ProgramArtifact,
    kb: KnowledgeBase,
    sandbox: Sandbox,
    backend: PlannerBackend,
    budget: int,
    workspace: Workspace | None,
    state: AgentState,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> tuple[list[StepResult], ProgramArtifact]:
    """Closed execute/repair loop: run, capture, regenerate, retry.

    Returns the successful attempt's step results; raises
    :class:`RepairBudgetExhausted` with the full per-attempt trace otherwise.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    ws_root = workspace.root if workspace else sandbox.base_dir
    trace: list[dict] = []
    current = program
    for attempt in range(1, budget + 1):
        state.exec_iterations = attempt
        ok, results = _execute_driver(
            current.driver(), kb, sandbox, ws_root, concurrency, attempt
        )
        if workspace is not None:
            log = {
                "attempt": attempt,
                "revision": current.revision,
                "ok": ok,
                "steps": [r.to_dict() for r in results],
            }
            path = workspace.dir("logs") / f"exec.attempt{attempt}.json"
            path.write_text(json.dumps(log, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        if ok:
            return results, current
        failures = [r for r in results if not r.ok]
        last_error = failures[-1].error_excerpt if failures else "unknown failure"
        trace.append({
            "attempt": attempt,
            "revision": current.revision,
            "error": last_error,
            "failed_steps": [r.to_dict() for r in failures],
        })
        state.record_error("execution", f"attempt {attempt}: {last_error[:500]}")
        if attempt == budget:
            break
        resp = backend.complete(BackendRequest(
            role=Role.PROGRAM_REPAIR,
            context={"driver": current.driver(), "error": last_error, "attempt": attempt},
            attempt=attempt,
        ))
        if not payload_is_well_formed(Role.PROGRAM_REPAIR, resp.payload):
            state.record_error("repair", "backend returned malformed repair; retrying as-is")
            repaired = current.driver()
        else:
            repaired = resp.payload["driver"]
            validate_driver(repaired, kb)
        repaired["revision"] = current.revision + 1
        nxt = ProgramArtifact(
            revision=current.revision + 1,
            body=json.dumps(repaired, sort_keys=True, indent=2) + "\n",
            parent_revision=current.revision,
            context={"last_error": last_error[:2000]},
        )
        _persist_program(nxt, workspace)
        state.programs.append(nxt)
        current = nxt
    raise RepairBudgetExhausted(
        f"execution failed after {budget} attempt(s); last error: "
        f"{trace[-1]['error'][:500] if trace else 'unknown'}",
        trace=trace,
    )


# --- analysis & visualization ------------------------------------------------------

def _read_csv_stats(path: Path) -> dict:
    import csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        return {"row_count": 0, "fields": [], "value_ranges": {}}
    header, data = rows[0], rows[1:]
    ranges: dict[str, list[float]] = {}
    for i, name in enumerate(header):
        vals = []
        for r in data:
            if i < len(r) and r[i].strip():
                try:
                    vals.append(float(r[i]))
                except ValueError:
                    vals = []
                    break
        if vals:
            ranges[name] = [min(vals), max(vals)]
    return {"row_count": len(data), "fields": header, "value_ranges": ranges}


def _svg_line_plot(values: list[float], title: str, width: int = 480, height: int = 240) -> str:
    if not values:
        values = [0.0]
    lo, hi = min(values), max(values)
    span = (hi - lo) or 1.0
    margin = 30
    pts = []
    n = len(values)
    for i, v in enumerate(values):
        x = margin + (width - 2 * margin) * (i / max(1, n - 1))
        y = height - margin - (height - 2 * margin) * ((v - lo) / span)
        pts.append(f"{x:.2f},{y:.2f}")
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        f'<text x="{margin}" y="18" font-family="monospace" font-size="12">{title}</text>'
        f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{" ".join(pts)}"/>'
        f'<text x="{margin}" y="{height - 8}" font-family="monospace" font-size="10">'
        f'min={lo:.6g} max={hi:.6g} n={n}</text>'
        "</svg>\n"
    )


def _make_visualizations(unit: ProcessedUnit, ws_root: Path) -> list[str]:
    import csv

    viz_dir = ws_root / "outputs" / _slug(unit.unit_id) / "viz"
    viz_dir.mkdir(parents=True, exist_ok=True)
    produced: list[str] = []

    # summary table over all final artifacts
    summary_rows = []
    first_numeric_series: list[float] = []
    first_numeric_name = ""
    for art in unit.artifacts:
        p = ws_root / art
        if p.suffix != ".csv" or not p.is_file():
            continue
        stats = _read_csv_stats(p)
        for name, (lo, hi) in stats["value_ranges"].items():
            summary_rows.append([Path(art).name, name, repr(lo), repr(hi)])
        if not first_numeric_series and stats["value_ranges"]:
            with open(p, "r", encoding="utf-8", newline="") as fh:
                rows = list(csv.reader(fh))
            header = rows[0]
            name = next(iter(stats["value_ranges"]))
            idx = header.index(name)
            for r in rows[1:501]:
                if idx < len(r) and r[idx].strip():
                    try:
                        first_numeric_series.append(float(r[idx]))
                    except ValueError:
                        pass
            first_numeric_name = name
    summary_path = viz_dir / "summary.csv"
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["artifact", "field", "min", "max"])
        w.writerows(summary_rows)
    produced.append(str(summary_path.relative_to(ws_root)))
    if first_numeric_series:
        plot_path = viz_dir / f"{_slug(first_numeric_name)}.svg"
        plot_path.write_text(
            _svg_line_plot(first_numeric_series, f"{unit.unit_id}: {first_numeric_name}"),
            encoding="utf-8",
        )
        produced.append(str(plot_path.relative_to(ws_root)))
    return produced


def analyze_results(
    state: AgentState, backend: PlannerBackend, ws_root: Path
) -> AnalysisReport | FailureReport:
    """Success path: per-unit statistics + interpretation summary. Failure
    path: auditable termination report naming the last error."""
    if not state.success:
        failure = [e for e in state.recorded_errors]
        last = failure[-1]["message"] if failure else "unknown"
        phase = failure[-1]["phase"] if failure else "unknown"
        return FailureReport(
            kind="failure",
            query=state.query,
            phase=phase,
            reason="run terminated before producing outputs",
            last_error=last,
            trace=failure,
        )
    if not state.outputs.O:
        state.success = False
        return FailureReport(
            kind="failure",
            query=state.query,
            phase="analysis",
            reason="internal invariant violation: success with empty outputs",
            last_error="no processed units recorded",
            trace=state.recorded_errors,
        )
    per_unit = []
    for unit in state.outputs.O:
        rows = 0
        ranges: dict[str, list[float]] = {}
        for art in unit.artifacts:
            p = ws_root / art
            if p.suffix == ".csv" and p.is_file():
                stats = _read_csv_stats(p)
                rows += stats["row_count"]
                for k, v in stats["value_ranges"].items():
                    if k in ranges:
                        ranges[k] = [min(ranges[k][0], v[0]), max(ranges[k][1], v[1])]
                    else:
                        ranges[k] = list(v)
        per_unit.append({
            "unit_id": unit.unit_id,
            "artifacts": list(unit.artifacts),
            "row_count": rows,
            "value_ranges": ranges,
        })
    resp = backend.complete(BackendRequest(
        role=Role.ANALYSIS_SUMMARY,
        context={"query": state.query, "per_unit": per_unit},
    ))
    summary = resp.payload.get("summary", "") if payload_is_well_formed(
        Role.ANALYSIS_SUMMARY, resp.payload
    ) else ""
    state.outputs.A = {"per_unit": per_unit, "summary": summary}
    return AnalysisReport(
        kind="analysis",
        query=state.query,
        per_unit=per_unit,
        summary=summary,
        visualizations=list(state.outputs.V),
    )


# --- the full stage ------------------------------------------------------------------

def run_processing(
    plan: Plan,
    kb: KnowledgeBase,
    backend: PlannerBackend,
    workspace: Workspace,
    sandbox: Sandbox | None = None,
    limits: ProcessingLimits | None = None,
    query: str = "",
    task_kind: str = "",
) -> tuple[ProcessedOutputs, AgentState, AnalysisReport | FailureReport]:
    """Full phase sequence with all transitions recorded in the agent state."""
    limits = limits or ProcessingLimits()
    sandbox = sandbox or Sandbox(workspace.dir("logs") / "sandbox", )
    state = AgentState(
        query=query,
        task_kind=task_kind,
        dataset_refs={"unit_ids": [s.unit_id for s in plan.unit_selections]},
        initial_plan=plan,
        workspace=str(workspace.root),
    )
    _snapshot_phase(workspace, "plan", sorted(workspace.dir("plan").glob("plan.rev*.json")))

    # refine/check loop, bounded
    pipelines: list[RefinedPipeline] = []
    feedback: list[str] | None = None
    approved = False
    for round_no in range(1, limits.refine_rounds + 1):
        state.refine_iterations = round_no
        try:
            pipelines = refine_plan(plan, kb, backend, feedback)
        except NoToolForStrategy as exc:
            state.record_error("refinement", str(exc))
            report = analyze_results(state, backend, workspace.root)
            _write_report(report, workspace)
            _snapshot_phase(workspace, "report", [workspace.dir("report") / "report.json"])
            raise
        verdicts = check_plan(pipelines, kb)
        state.refined_pipelines = pipelines
        if all(v.ok for v in verdicts):
            approved = True
            break
        feedback = [r for v in verdicts for r in v.reasons]
        for v in verdicts:
            for r in v.reasons:
                state.record_error("plan_check", f"{v.unit_id}: {r}")
    if not approved:
        report = analyze_results(state, backend, workspace.root)
        _write_report(report, workspace)
        _snapshot_phase(workspace, "report", [workspace.dir("report") / "report.json"])
        return state.outputs, state, report

    program = synthesize_program(pipelines, state, kb, backend, workspace)
    _snapshot_phase(workspace, "programs", sorted(workspace.dir("programs").glob("driver.rev*.json")))

    try:
        results, final_program = execute_with_repair(
            program, kb, sandbox, backend, limits.repair_budget,
            workspace, state, limits.concurrency,
        )
    except RepairBudgetExhausted:
        sandbox.event_log.write(workspace.dir("logs") / "events.jsonl")
        _snapshot_phase(workspace, "programs-final",
                        sorted(workspace.dir("programs").glob("driver.rev*.json")))
        _snapshot_phase(workspace, "execution-logs",
                        sorted(workspace.dir("logs").glob("exec.attempt*.json")))
        report = analyze_results(state, backend, workspace.root)
        _write_report(report, workspace)
        _snapshot_phase(workspace, "report", [workspace.dir("report") / "report.json"])
        state.check_invariants(limits.refine_rounds, limits.repair_budget)
        return state.outputs, state, report

    sandbox.event_log.write(workspace.dir("logs") / "events.jsonl")

    # collect outputs: final artifacts per unit (empty pipelines are auxiliary
    # inputs and contribute no processed unit)
    final_driver = final_program.driver()
    by_unit: dict[str, list[str]] = {}
    for du in final_driver["units"]:
        if not du["steps"]:
            continue
        unit_results = [r for r in results if r.unit_id == du["unit_id"]]
        last_step = max(r.step_index for r in unit_results)
        arts = [r for r in unit_results if r.step_index == last_step][0].outputs
        by_unit[du["unit_id"]] = arts
    state.outputs.O = [
        ProcessedUnit(uid, arts) for uid, arts in sorted(by_unit.items())
    ]
    state.success = bool(state.outputs.O)

    for unit in state.outputs.O:
        state.outputs.V.extend(_make_visualizations(unit, workspace.root))

    report = analyze_results(state, backend, workspace.root)
    _write_report(report, workspace)

    out_files = sorted(
        p for p in workspace.dir("outputs").rglob("*") if p.is_file()
    )
    if out_files:
        _snapshot_phase(workspace, "outputs", out_files)
    _snapshot_phase(workspace, "programs-final",
                    sorted(workspace.dir("programs").glob("driver.rev*.json")))
    _snapshot_phase(workspace, "execution-logs",
                    sorted(workspace.dir("logs").glob("exec.attempt*.json")))
    _snapshot_phase(workspace, "report", [workspace.dir("report") / "report.json"])
    state.check_invariants(limits.refine_rounds, limits.repair_budget)
    return state.outputs, state, report


def _write_report(report: AnalysisReport | FailureReport, workspace: Workspace) -> None:
    path = workspace.dir("report") / "report.json"
    path.write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _snapshot_phase(workspace: Workspace, phase: str, artifacts) -> None:
    arts = [a for a in artifacts if Path(a).is_file()]
    if arts:
        snapshot(workspace, phase, arts)

"""Command-line entry point for the staged workflow.

Commands: ``kb build``, ``kb show``, ``kb add-tools``, ``case add|list|show``,
``plan``, ``run``, ``integrate``, ``prepare``. Exit codes: 0 success, 1 domain
failure (failure report path printed), 2 usage error. Config precedence:
flags > environment > sciforge.toml > defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import data_access, intent_parsing, knowledge_base as kbmod, processing
from .backends import make_backend
from .errors import SciForgeError
from .integration import run_integration
from .knowledge_base import Case, KnowledgeBase, ToolDescriptor
from .sandbox import Sandbox
from .tools import builtin_tool_descriptors
from .workspace import finalize, open_workspace, snapshot

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

DEFAULTS = {
    "kb": "kb",
    "workspace_dir": "runs",
    "backend": "deterministic",
    "budget": data_access.DEFAULT_REFLECTION_BUDGET,
    "delta": intent_parsing.DEFAULT_DELTA,
    "max_rounds": intent_parsing.DEFAULT_MAX_ROUNDS,
    "concurrency": processing.DEFAULT_CONCURRENCY,
    "repair_budget": processing.DEFAULT_REPAIR_BUDGET,
    "max_backtracks": 4,
    "remote_endpoint": "",
    "remote_key": "",
    "remote_model": "",
}

ENV_KEYS = {
    "backend": "SCIFORGE_BACKEND",
    "kb": "SCIFORGE_KB",
    "workspace_dir": "SCIFORGE_WORKSPACE_DIR",
    "remote_endpoint": "SCIFORGE_REMOTE_ENDPOINT",
    "remote_key": "SCIFORGE_REMOTE_KEY",
    "remote_model": "SCIFORGE_REMOTE_MODEL",
}


def _backend_from_config(cfg: dict, log_dir=None):
    return make_backend(
        str(cfg["backend"]),
        log_dir=log_dir,
        endpoint=str(cfg.get("remote_endpoint", "")),
        api_key=str(cfg.get("remote_key", "")),
        model=str(cfg.get("remote_model", "")),
    )


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    config_path = Path(getattr(args, "config", None) or "sciforge.toml")
    if config_path.is_file():
        with open(config_path, "rb") as fh:
            for k, v in tomllib.load(fh).items():
                if k in cfg:
                    cfg[k] = v
    for key, env in ENV_KEYS.items():
        if os.environ.get(env):
            cfg[key] = os.environ[env]
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _load_or_new_kb(root: Path) -> KnowledgeBase:
    if (root / "index.json").is_file():
        return kbmod.load(root)
    return KnowledgeBase()


def _seed_builtin_tools(kb: KnowledgeBase) -> int:
    registered = {t.descriptor.id for t in kb.tool_lake}
    n = 0
    for desc in builtin_tool_descriptors():
        if desc.id not in registered:
            kb.register_tool(desc, summary="builtin tool pack")
            n += 1
    return n


def _drop_stale_dataset(kb: KnowledgeBase, root: Path) -> None:
    # rebuilding the same root replaces its dataset entry (update semantics)
    ds_id = data_access.dataset_id_for_root(root)
    if kb.dataset(ds_id) is not None:
        kb.remove_dataset(ds_id)


def _emit(args, payload: dict, human: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, sort_keys=True, indent=2))
    else:
        print(human)


def _final_plan(outcome: intent_parsing.ParseOutcome) -> dict:
    return {
        "plan": outcome.plan.to_dict(),
        "approved": outcome.approved,
        "rounds": outcome.rounds,
        "verdicts": [v.to_dict() for v in outcome.verdicts],
    }


# --- commands -----------------------------------------------------------------

def cmd_kb_build(args) -> int:
    cfg = resolve_config(args)
    root = Path(args.root)
    if not root.is_dir():
        print(f"error: dataset root does not exist: {root}", file=sys.stderr)
        return 2
    kb_dir = Path(cfg["kb"])
    kb = _load_or_new_kb(kb_dir)
    if not args.no_seed_tools:
        _seed_builtin_tools(kb)
    _drop_stale_dataset(kb, root)
    backend = _backend_from_config(cfg, log_dir=kb_dir / "backend-logs")
    sandbox = Sandbox(kb_dir / ".sandbox")
    library = data_access.ScriptLibrary(kb_dir / "scripts")
    report = data_access.build_knowledge_base(
        query=args.query or "",
        root=root,
        kb=kb,
        backend=backend,
        budget=int(cfg["budget"]),
        sandbox=sandbox,
        library=library,
        trace_dir=kb_dir / "traces",
    )
    kbmod.persist(kb, kb_dir)
    _emit(args, report.to_dict(),
          f"dataset {report.dataset_id}: {len(report.unit_ids)} unit(s), "
          f"{len(report.failures)} failure(s); kb version {report.version} at {kb_dir}")
    return 0


def cmd_kb_show(args) -> int:
    cfg = resolve_config(args)
    kb = kbmod.load(Path(cfg["kb"]))
    doc = {
        "version": kb.version,
        "datasets": [
            {"id": ds.id, "units": [u.id for u in ds.units]} for ds in kb.data_lake
        ],
        "tools": [t.descriptor.id for t in kb.tool_lake],
        "cases": [c.id for c in kb.case_lake],
    }
    _emit(args, doc, json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_kb_add_tools(args) -> int:
    cfg = resolve_config(args)
    kb_dir = Path(cfg["kb"])
    kb = _load_or_new_kb(kb_dir)
    docs = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    if not isinstance(docs, list):
        docs = docs.get("tools", [])
    n = 0
    for doc in docs:
        desc = ToolDescriptor.from_dict(doc)
        if kb.tool(desc.id) is None:
            kb.register_tool(desc, summary=doc.get("summary"))
            n += 1
    kbmod.persist(kb, kb_dir)
    _emit(args, {"registered": n, "version": kb.version},
          f"registered {n} tool(s); kb version {kb.version}")
    return 0


def cmd_case(args) -> int:
    cfg = resolve_config(args)
    kb_dir = Path(cfg["kb"])
    kb = _load_or_new_kb(kb_dir)
    if args.case_cmd == "add":
        case = Case.from_dict(json.loads(Path(args.file).read_text(encoding="utf-8")))
        version = kb.register_case(case)
        kbmod.persist(kb, kb_dir)
        _emit(args, {"id": case.id, "version": version},
              f"case {case.id} registered; kb version {version}")
    elif args.case_cmd == "list":
        doc = [{"id": c.id, "description": c.description} for c in kb.case_lake]
        _emit(args, {"cases": doc}, "\n".join(f"{c['id']}: {c['description']}" for c in doc) or "(no cases)")
    else:  # show
        case = kb.case(args.id)
        if case is None:
            print(f"error: no case {args.id!r}", file=sys.stderr)
            return 1
        _emit(args, case.to_dict(), json.dumps(case.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_plan(args) -> int:
    cfg = resolve_config(args)
    _backend_from_config(cfg)  # fail fast on a bad backend spec
    kb = kbmod.load(Path(cfg["kb"]))
    ws = open_workspace(Path(cfg["workspace_dir"]), args.query, cfg, kb.version)
    backend = _backend_from_config(cfg, log_dir=ws.dir("logs") / "backend")
    outcome = intent_parsing.parse_intent(
        args.query, kb, backend,
        delta=float(cfg["delta"]),
        max_rounds=int(cfg["max_rounds"]),
        plan_dir=ws.dir("plan"),
    )
    snapshot(ws, "plan", sorted(ws.dir("plan").glob("plan.rev*.json")))
    _emit(args, {**_final_plan(outcome), "workspace": str(ws.root)},
          f"plan revision {outcome.plan.revision} "
          f"({'approved' if outcome.approved else 'NOT approved'}) "
          f"after {outcome.rounds} round(s); workspace {ws.root}")
    return 0 if outcome.approved else 1


def _run_stage(query: str, cfg: dict, kb: KnowledgeBase, backend, ws):
    outcome = intent_parsing.parse_intent(
        query, kb, backend,
        delta=float(cfg["delta"]),
        max_rounds=int(cfg["max_rounds"]),
        plan_dir=ws.dir("plan"),
    )
    if not outcome.approved:
        raise SciForgeError(
            f"plan not approved after {outcome.rounds} review round(s); "
            f"see {ws.dir('plan')}"
        )
    sandbox = Sandbox(ws.dir("logs") / "sandbox-pool", )
    limits = processing.ProcessingLimits(
        repair_budget=int(cfg["repair_budget"]),
        concurrency=int(cfg["concurrency"]),
    )
    outputs, state, report = processing.run_processing(
        outcome.plan, kb, backend, ws,
        sandbox=sandbox, limits=limits,
        query=query, task_kind=outcome.requirement.task_kind,
    )
    return outcome, outputs, state, report


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    _backend_from_config(cfg)  # fail fast on a bad backend spec
    kb = kbmod.load(Path(cfg["kb"]))
    if not args.plan and not args.query:
        print("error: run needs --plan or --query", file=sys.stderr)
        return 2
    if args.plan:
        # execute a previously emitted plan document directly, no re-planning
        doc = json.loads(Path(args.plan).read_text(encoding="utf-8"))
        plan = intent_parsing.Plan.from_dict(doc["plan"])
        plan.validate(kb)
        query = args.query or doc.get("query", "")
        ws = open_workspace(Path(cfg["workspace_dir"]), query, cfg, kb.version)
        backend = _backend_from_config(cfg, log_dir=ws.dir("logs") / "backend")
        (ws.dir("plan") / f"plan.rev{plan.revision}.json").write_text(
            json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        sandbox = Sandbox(ws.dir("logs") / "sandbox-pool")
        limits = processing.ProcessingLimits(
            repair_budget=int(cfg["repair_budget"]),
            concurrency=int(cfg["concurrency"]),
        )
        outputs, state, report = processing.run_processing(
            plan, kb, backend, ws, sandbox=sandbox, limits=limits,
            query=query, task_kind="",
        )
    else:
        query = args.query
        ws = open_workspace(Path(cfg["workspace_dir"]), query, cfg, kb.version)
        backend = _backend_from_config(cfg, log_dir=ws.dir("logs") / "backend")
        outcome, outputs, state, report = _run_stage(query, cfg, kb, backend, ws)
    ok = report.kind == "analysis"
    finalize(ws, ws.dir("report") / "report.json")
    _emit(args, {"workspace": str(ws.root), "report": report.to_dict()},
          f"{report.kind} report: {ws.dir('report') / 'report.json'}")
    return 0 if ok else 1


def cmd_integrate(args) -> int:
    cfg = resolve_config(args)
    ws_root = Path(args.run)
    report_path = ws_root / "report" / "report.json"
    if not report_path.is_file():
        print(f"error: no report under {ws_root}", file=sys.stderr)
        return 2
    kb = kbmod.load(Path(cfg["kb"]))
    backend = _backend_from_config(cfg, log_dir=ws_root / "logs" / "backend")
    report = json.loads(report_path.read_text(encoding="utf-8"))
    if report.get("kind") != "analysis":
        print("error: run did not succeed; nothing to integrate", file=sys.stderr)
        return 1
    plans = sorted((ws_root / "plan").glob("plan.rev*.json"))
    if not plans:
        print(f"error: no plan revisions under {ws_root}", file=sys.stderr)
        return 2
    plan_doc = json.loads(plans[-1].read_text(encoding="utf-8"))
    strategy = plan_doc["plan"]["integration_strategy"]
    components = [
        str(ws_root / art)
        for unit in report.get("per_unit", [])
        for art in unit.get("artifacts", [])
        if art.endswith(".csv")
    ]
    sandbox = Sandbox(ws_root / "logs" / "sandbox-integrate")
    duni = run_integration(
        strategy, components, kb, backend, sandbox,
        ws_root / "duni", max_backtracks=int(cfg["max_backtracks"]),
    )
    _emit(args, duni.to_dict(),
          f"unified dataset: {len(duni.components)} component(s), "
          f"certificates {'all pass' if duni.all_pass() else 'FAILED'}; "
          f"manifest {duni.manifest_path}")
    return 0


def cmd_prepare(args) -> int:
    cfg = resolve_config(args)
    root = Path(args.root)
    if not root.is_dir():
        print(f"error: dataset root does not exist: {root}", file=sys.stderr)
        return 2
    kb_dir = Path(cfg["kb"])
    kb = _load_or_new_kb(kb_dir)
    if not args.no_seed_tools:
        _seed_builtin_tools(kb)
    _drop_stale_dataset(kb, root)
    backend = _backend_from_config(cfg, log_dir=kb_dir / "backend-logs")

    kb_sandbox = Sandbox(kb_dir / ".sandbox")
    library = data_access.ScriptLibrary(kb_dir / "scripts")
    build = data_access.build_knowledge_base(
        query=args.query, root=root, kb=kb, backend=backend,
        budget=int(cfg["budget"]), sandbox=kb_sandbox, library=library,
        trace_dir=kb_dir / "traces",
    )
    kbmod.persist(kb, kb_dir)

    ws = open_workspace(Path(cfg["workspace_dir"]), args.query, cfg, kb.version)
    backend = _backend_from_config(cfg, log_dir=ws.dir("logs") / "backend")
    outcome, outputs, state, report = _run_stage(args.query, cfg, kb, backend, ws)
    if report.kind != "analysis":
        finalize(ws, ws.dir("report") / "report.json")
        print(f"failure report: {ws.dir('report') / 'report.json'}", file=sys.stderr)
        return 1

    components = [
        str(ws.root / art)
        for unit in report.per_unit
        for art in unit.get("artifacts", [])
        if art.endswith(".csv")
    ]
    sandbox = Sandbox(ws.dir("logs") / "sandbox-integrate")
    duni = run_integration(
        outcome.plan.integration_strategy, components, kb, backend, sandbox,
        ws.dir("duni"), max_backtracks=int(cfg["max_backtracks"]),
    )
    duni_files = sorted(p for p in ws.dir("duni").rglob("*") if p.is_file())
    snapshot(ws, "duni", duni_files)

    final_doc = {
        "query": args.query,
        "dataset": build.to_dict(),
        "plan_approved": outcome.approved,
        "report": report.to_dict(),
        "duni_manifest": "duni/manifest.json",
        "certificates_pass": duni.all_pass(),
    }
    final_path = ws.dir("report") / "final.json"
    final_path.write_text(json.dumps(final_doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    snapshot(ws, "final-report", [final_path])
    finalize(ws, ws.dir("report") / "report.json")
    _emit(args, {**final_doc, "workspace": str(ws.root),
                 "duni_manifest_abs": str(ws.dir("duni") / "manifest.json")},
          f"prepared dataset: {len(duni.components)} component(s); "
          f"workspace {ws.root}; duni manifest {duni.manifest_path}")
    return 0


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sciforge",
        description="Turn a natural-language data request plus a raw dataset "
                    "directory into a validated, integrated dataset.",
    )
    parser.add_argument("--config", default=None, help="path to sciforge.toml")
    parser.add_argument("--json", action="store_true", help="emit machine-readable JSON")
    parser.add_argument("--kb", default=None, help="knowledge-base store directory")
    parser.add_argument("--workspace-dir", dest="workspace_dir", default=None,
                        help="directory holding run workspaces")
    parser.add_argument("--backend", default=None,
                        help="deterministic | scripted:<path> | remote")
    sub = parser.add_subparsers(dest="cmd", required=True)

    kb_p = sub.add_parser("kb", help="knowledge-base management")
    kb_sub = kb_p.add_subparsers(dest="kb_cmd", required=True)
    b = kb_sub.add_parser("build", help="build/update the KB from a dataset root")
    b.add_argument("--root", required=True)
    b.add_argument("--query", default="")
    b.add_argument("--budget", type=int, default=None)
    b.add_argument("--no-seed-tools", action="store_true")
    b.set_defaults(func=cmd_kb_build)
    s = kb_sub.add_parser("show", help="print KB contents")
    s.set_defaults(func=cmd_kb_show)
    t = kb_sub.add_parser("add-tools", help="register tools from a JSON manifest")
    t.add_argument("manifest")
    t.set_defaults(func=cmd_kb_add_tools)

    case_p = sub.add_parser("case", help="case-lake management")
    case_sub = case_p.add_subparsers(dest="case_cmd", required=True)
    a = case_sub.add_parser("add")
    a.add_argument("--file", required=True)
    a.set_defaults(func=cmd_case)
    case_sub.add_parser("list").set_defaults(func=cmd_case)
    sh = case_sub.add_parser("show")
    sh.add_argument("id")
    sh.set_defaults(func=cmd_case)

    p = sub.add_parser("plan", help="emit a validated plan for a query")
    p.add_argument("--query", required=True)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--max-rounds", dest="max_rounds", type=int, default=None)
    p.set_defaults(func=cmd_plan)

    r = sub.add_parser("run", help="run the processing stage")
    r.add_argument("--query", default=None)
    r.add_argument("--plan", default=None, help="plan document (plan.revK.json)")
    r.add_argument("--concurrency", type=int, default=None)
    r.add_argument("--repair-budget", dest="repair_budget", type=int, default=None)
    r.set_defaults(func=cmd_run)

    i = sub.add_parser("integrate", help="integrate a completed run into D_uni")
    i.add_argument("--run", required=True, help="run workspace directory")
    i.add_argument("--max-backtracks", dest="max_backtracks", type=int, default=None)
    i.set_defaults(func=cmd_integrate)

    pr = sub.add_parser("prepare", help="end-to-end: build, plan, run, integrate")
    pr.add_argument("--root", required=True)
    pr.add_argument("--query", required=True)
    pr.add_argument("--budget", type=int, default=None)
    pr.add_argument("--delta", type=float, default=None)
    pr.add_argument("--max-rounds", dest="max_rounds", type=int, default=None)
    pr.add_argument("--concurrency", type=int, default=None)
    pr.add_argument("--repair-budget", dest="repair_budget", type=int, default=None)
    pr.add_argument("--max-backtracks", dest="max_backtracks", type=int, default=None)
    pr.add_argument("--no-seed-tools", action="store_true")
    pr.set_defaults(func=cmd_prepare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SciForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        # bad flag values or unreadable argument files are usage errors
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Isolated subprocess execution with captured output and artifact accounting.

Every run gets a fresh working directory, an env restricted to an allowlist,
a hard timeout, and a start/stop record in the shared event log (the basis
for peak-concurrency checks). Tool invocations follow the manifest-v1
protocol: the engine writes ``task.json`` into the workdir, invokes
``command task.json``, and the tool must exit 0 and write ``result.json``.
"""

from __future__ import annotations

import json
import os
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SpawnFailure, TimeoutKilled

STREAM_CAP_BYTES = 1 << 20  # 1 MiB per stream
TRUNCATION_MARKER = "\n...[truncated]"

DEFAULT_ENV_ALLOWLIST = [
    "PATH", "PYTHONPATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "VIRTUAL_ENV",
    "SYSTEMROOT", "PYTHONIOENCODING",
]


@dataclass
class SandboxSpec:
    command: list[str]
    workdir: Path
    timeout_s: float = 60.0
    env_allowlist: list[str] | None = None
    expected_outputs: list[Path] = field(default_factory=list)
    label: str = ""

    def validate(self) -> None:
        if self.timeout_s <= 0:
            raise ValueError("timeout must be > 0")
        if not self.command:
            raise ValueError("command must be non-empty")


@dataclass
class ExecutionResult:
    exit_code: int
    stdout: str
    stderr: str
    produced: list[str] = field(default_factory=list)
    missing_outputs: list[str] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def ok(self) -> bool:
        return self.exit_code == 0 and not self.missing_outputs

    def failure_excerpt(self, limit: int = 2000) -> str:
        parts = []
        if self.missing_outputs:
            parts.append(f"missing declared outputs: {self.missing_outputs}")
        if self.stderr.strip():
            parts.append(self.stderr.strip()[-limit:])
        elif self.stdout.strip():
            parts.append(self.stdout.strip()[-limit:])
        if not parts:
            parts.append(f"exit code {self.exit_code} with no diagnostics")
        return "\n".join(parts)


@dataclass
class Event:
    kind: str  # "start" | "stop"
    label: str
    t_mono: float
    t_wall: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "label": self.label, "t_mono": self.t_mono, "t_wall": self.t_wall}


class EventLog:
    """Thread-safe start/stop event journal for sandbox executions."""

    def __init__(self):
        self._events: list[Event] = []
        self._lock = threading.Lock()

    def record(self, kind: str, label: str) -> None:
        ev = Event(kind, label, time.monotonic(), time.time())
        with self._lock:
            self._events.append(ev)

    def events(self) -> list[Event]:
        with self._lock:
            return list(self._events)

    def peak_concurrency(self) -> int:
        depth = peak = 0
        for ev in sorted(self.events(), key=lambda e: e.t_mono):
            if ev.kind == "start":
                depth += 1
                peak = max(peak, depth)
            elif ev.kind == "stop":
                depth -= 1
        return peak

    def write(self, path: Path) -> None:
        lines = [json.dumps(ev.to_dict(), sort_keys=True) for ev in self.events()]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @staticmethod
    def peak_from_file(path: Path) -> int:
        depth = peak = 0
        rows = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                rows.append(json.loads(line))
        for row in sorted(rows, key=lambda r: r["t_mono"]):
            if row["kind"] == "start":
                depth += 1
                peak = max(peak, depth)
            elif row["kind"] == "stop":
                depth -= 1
        return peak


def _cap(data: bytes) -> str:
    text = data.decode("utf-8", errors="replace")
    if len(data) > STREAM_CAP_BYTES:
        return data[:STREAM_CAP_BYTES].decode("utf-8", errors="replace") + TRUNCATION_MARKER
    return text


class Sandbox:
    """Runs commands in fresh per-invocation directories."""

    def __init__(self, base_dir: Path | str, event_log: EventLog | None = None):
        self.base_dir = Path(base_dir).resolve()
        self.base_dir.mkdir(parents=True, exist_ok=True)
        self.event_log = event_log or EventLog()
        self._counter = 0
        self._lock = threading.Lock()

    def fresh_workdir(self, name: str = "run") -> Path:
        while True:
            with self._lock:
                self._counter += 1
                n = self._counter
            wd = self.base_dir / f"{name}-{n:04d}"
            if not wd.exists():  # skip leftovers from earlier invocations
                wd.mkdir(parents=True, exist_ok=False)
                return wd

    def run(self, spec: SandboxSpec) -> ExecutionResult:
        spec.validate()
        workdir = Path(spec.workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        if any(p.name == "result.json" for p in workdir.iterdir()):
            raise ValueError(f"workdir not fresh: {workdir}")

        allow = spec.env_allowlist if spec.env_allowlist is not None else DEFAULT_ENV_ALLOWLIST
        env = {k: v for k, v in os.environ.items() if k in allow}

        label = spec.label or spec.command[0]
        self.event_log.record("start", label)
        started = time.monotonic()
        try:
            proc = subprocess.run(
                spec.command,
                cwd=str(workdir),
                env=env,
                capture_output=True,
                timeout=spec.timeout_s,
            )
        except subprocess.TimeoutExpired as exc:
            self.event_log.record("stop", label)
            wall = time.monotonic() - started
            partial = ExecutionResult(
                exit_code=-9,
                stdout=_cap(exc.stdout or b""),
                stderr=_cap(exc.stderr or b"") + f"\nkilled after {spec.timeout_s}s timeout",
                wall_time_s=wall,
            )
            raise TimeoutKilled(
                f"{label} exceeded {spec.timeout_s}s timeout", result=partial
            ) from exc
        except (FileNotFoundError, PermissionError, NotADirectoryError) as exc:
            self.event_log.record("stop", label)
            raise SpawnFailure(f"cannot spawn {spec.command[0]!r}: {exc}") from exc
        self.event_log.record("stop", label)
        wall = time.monotonic() - started

        missing = [str(p) for p in spec.expected_outputs if not Path(p).exists()]
        produced = [str(p) for p in spec.expected_outputs if Path(p).exists()]
        return ExecutionResult(
            exit_code=proc.returncode,
            stdout=_cap(proc.stdout),
            stderr=_cap(proc.stderr),
            produced=produced,
            missing_outputs=missing,
            wall_time_s=wall,
        )


# --- manifest-v1 tool protocol ----------------------------------------------

def write_task(workdir: Path, inputs: list[str], params: dict, outputs: list[str]) -> Path:
    """Write the manifest-v1 task document the tool will receive."""
    task = {"inputs": list(inputs), "params": params, "outputs": list(outputs)}
    path = Path(workdir) / "task.json"
    path.write_text(json.dumps(task, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_result(workdir: Path) -> dict:
    path = Path(workdir) / "result.json"
    if not path.is_file():
        raise FileNotFoundError(f"tool produced no result.json in {workdir}")
    return json.loads(path.read_text(encoding="utf-8"))


@dataclass
class ToolRunOutcome:
    result: ExecutionResult
    outputs: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.result.ok


def run_tool(
    sandbox: Sandbox,
    command: list[str],
    workdir: Path,
    inputs: list[str],
    params: dict,
    outputs: list[str],
    timeout_s: float,
    label: str = "",
) -> ToolRunOutcome:
    """Invoke one manifest-v1 tool: write task.json, run, collect result.json.

    ``inputs``/``outputs`` are paths relative to ``workdir`` (or absolute).
    A nonzero exit, a missing result.json, or a missing declared output all
    count as failure.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    task_path = write_task(workdir, inputs, params, outputs)
    expected = [workdir / o if not Path(o).is_absolute() else Path(o) for o in outputs]
    spec = SandboxSpec(
        command=list(command) + [task_path.name],
        workdir=workdir,
        timeout_s=timeout_s,
        expected_outputs=expected,
        label=label or (command[-1] if command else "tool"),
    )
    res = sandbox.run(spec)
    if res.exit_code != 0:
        return ToolRunOutcome(result=res)
    try:
        doc = read_result(workdir)
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        res.exit_code = res.exit_code or 1
        res.stderr = (res.stderr + f"\nprotocol violation: {exc}").strip()
        res.missing_outputs = ["result.json"]
        return ToolRunOutcome(result=res)
    declared = [str(o) for o in doc.get("outputs", [])]
    missing = [o for o in declared if not (workdir / o).exists() and not Path(o).exists()]
    res.missing_outputs = sorted(set(res.missing_outputs) | set(missing))
    return ToolRunOutcome(result=res, outputs=declared, stats=doc.get("stats", {}))

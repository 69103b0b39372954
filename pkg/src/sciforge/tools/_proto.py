"""Shared manifest-v1 plumbing for the builtin tools.

A tool is invoked as ``python -m sciforge.tools.<name> [--fail-times N
--counter PATH] task.json`` with cwd set to its sandbox workdir. It reads the
task document ``{inputs, params, outputs}``, does its work, writes
``result.json`` listing exactly the files it produced, and exits 0. Any
validation problem exits nonzero before anything is written.

CSV dialect: comma-separated, header row, UTF-8, ``\\n`` line endings.
Missing values: empty cell or a NaN-ish token on input; empty cell on output.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

MISSING_TOKENS = {"", "nan", "na", "null", "none"}


class ToolUsageError(Exception):
    """Domain-level failure (bad inputs for this tool); exit code 4."""


def is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def parse_number(cell: str) -> float | None:
    try:
        return float(cell)
    except ValueError:
        return None


def read_table(path: str | Path, has_header: bool = True) -> tuple[list[str], list[list[str]]]:
    p = Path(path)
    if not p.is_file():
        raise ToolUsageError(f"input table missing: {path}")
    with open(p, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        return [], []
    if has_header:
        return [c.strip() for c in rows[0]], rows[1:]
    return [], rows


def write_table(path: str | Path, header: list[str], rows: list[list[str]]) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def format_number(value: float) -> str:
    """Shortest round-trip decimal; integers without trailing .0 noise kept as-is."""
    return repr(value)


def _consume_counter(path: str) -> int:
    p = Path(path)
    count = 0
    if p.is_file():
        try:
            count = int(p.read_text().strip() or "0")
        except ValueError:
            count = 0
    count += 1
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(str(count))
    return count


def _validate_task(doc: dict) -> tuple[list[str], dict, list[str]]:
    if not isinstance(doc, dict):
        raise ValueError("task document must be a JSON object")
    for key in ("inputs", "params", "outputs"):
        if key not in doc:
            raise ValueError(f"task document missing {key!r}")
    inputs, params, outputs = doc["inputs"], doc["params"], doc["outputs"]
    if not isinstance(inputs, list) or not all(isinstance(x, str) for x in inputs):
        raise ValueError("inputs must be a list of paths")
    if not isinstance(params, dict):
        raise ValueError("params must be an object")
    if not isinstance(outputs, list) or not all(isinstance(x, str) for x in outputs):
        raise ValueError("outputs must be a list of paths")
    return inputs, params, outputs


def tool_main(handler, argv: list[str] | None = None) -> int:
    """Run one tool: fault injection, task validation, work, result.json."""
    parser = argparse.ArgumentParser()
    parser.add_argument("task", help="path to the manifest-v1 task document")
    parser.add_argument("--fail-times", type=int, default=0,
                        help="fail this many invocations before succeeding")
    parser.add_argument("--counter", default="fail_counter.txt",
                        help="counter file tracking injected failures")
    args = parser.parse_args(argv)

    if args.fail_times > 0:
        n = _consume_counter(args.counter)
        if n <= args.fail_times:
            print(f"injected failure {n}/{args.fail_times}", file=sys.stderr)
            return 3

    try:
        with open(args.task, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        inputs, params, outputs = _validate_task(doc)
    except (OSError, ValueError) as exc:
        print(f"invalid task: {exc}", file=sys.stderr)
        return 2

    try:
        produced, stats = handler(inputs, params, outputs)
    except ToolUsageError as exc:
        print(str(exc), file=sys.stderr)
        return 4

    result = {"outputs": list(produced), "stats": stats}
    with open("result.json", "w", encoding="utf-8") as fh:
        json.dump(result, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 0

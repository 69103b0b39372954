"""Rename table columns according to an explicit old->new mapping."""

from __future__ import annotations

import csv
import io
import sys
from pathlib import Path

from ._proto import ToolUsageError, tool_main


def run(inputs: list[str], params: dict, outputs: list[str]):
    if len(inputs) != 1 or len(outputs) != 1:
        raise ToolUsageError("expected one input table and one output path")
    mapping = params.get("mapping", {})
    if not isinstance(mapping, dict):
        raise ToolUsageError("mapping param must be an object")

    src = Path(inputs[0])
    if not src.is_file():
        raise ToolUsageError(f"input table missing: {inputs[0]}")
    text = src.read_text(encoding="utf-8")
    lines = text.split("\n")
    if not lines or not lines[0].strip():
        raise ToolUsageError("input table has no header")

    header = next(csv.reader([lines[0]]))
    unknown = [k for k in mapping if k not in header]
    if unknown:
        raise ToolUsageError(f"mapping names columns absent from header: {unknown}")
    new_header = [mapping.get(h, h) for h in header]

    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(new_header)
    out = Path(outputs[0])
    out.parent.mkdir(parents=True, exist_ok=True)
    # data lines pass through untouched so an identity mapping is byte-identical
    out.write_text(buf.getvalue() + "\n".join(lines[1:]), encoding="utf-8")
    return [outputs[0]], {"renamed": sum(1 for h in header if mapping.get(h, h) != h)}


if __name__ == "__main__":
    sys.exit(tool_main(run))

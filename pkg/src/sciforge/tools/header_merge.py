"""Merge a semantic header file with a headerless records file into one table."""

from __future__ import annotations

import csv
import sys
from pathlib import Path

from ._proto import ToolUsageError, read_table, tool_main, write_table

_DELIMS = [",", "\t", ";", "|"]


def _header_names(path: str) -> list[str]:
    p = Path(path)
    if not p.is_file():
        raise ToolUsageError(f"header file missing: {path}")
    text = p.read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ToolUsageError(f"header file is empty: {path}")
    line = lines[0]
    delim = max(_DELIMS, key=line.count)
    return [c.strip() for c in next(csv.reader([line], delimiter=delim))]


def run(inputs: list[str], params: dict, outputs: list[str]):
    if len(inputs) != 2:
        raise ToolUsageError(f"expected [header, records] inputs, got {len(inputs)}")
    if len(outputs) != 1:
        raise ToolUsageError("expected exactly one output path")
    names = _header_names(inputs[0])
    _, rows = read_table(inputs[1], has_header=False)
    for row in rows:
        if len(row) != len(names):
            raise ToolUsageError(
                f"ColumnCountMismatch: header has {len(names)} columns, "
                f"records row has {len(row)}"
            )
    write_table(outputs[0], names, rows)
    return [outputs[0]], {"rows": len(rows), "columns": len(names)}


if __name__ == "__main__":
    sys.exit(tool_main(run))

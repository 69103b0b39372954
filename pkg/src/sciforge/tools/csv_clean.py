"""Normalize a table: unify missing markers, strip cell padding, drop
malformed rows (wrong column count)."""

from __future__ import annotations

import csv
import sys
import time
from pathlib import Path

from ._proto import ToolUsageError, is_missing, tool_main, write_table


def run(inputs: list[str], params: dict, outputs: list[str]):
    if len(inputs) != 1 or len(outputs) != 1:
        raise ToolUsageError("expected one input table and one output path")
    delay_ms = int(params.get("delay_ms", 0))
    if delay_ms:
        time.sleep(delay_ms / 1000.0)

    src = Path(inputs[0])
    if not src.is_file():
        raise ToolUsageError(f"input table missing: {inputs[0]}")
    with open(src, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise ToolUsageError("input table is empty")

    header = [c.strip() for c in rows[0]]
    cleaned = []
    normalized = 0
    dropped = 0
    for row in rows[1:]:
        if len(row) != len(header):
            dropped += 1
            continue
        out = []
        for cell in row:
            c = cell.strip()
            if is_missing(c) and c != "":
                c = ""
                normalized += 1
            out.append(c)
        cleaned.append(out)

    write_table(outputs[0], header, cleaned)
    return [outputs[0]], {
        "rows_in": len(rows) - 1,
        "rows_out": len(cleaned),
        "dropped_malformed": dropped,
        "cells_normalized": normalized,
    }


if __name__ == "__main__":
    sys.exit(tool_main(run))

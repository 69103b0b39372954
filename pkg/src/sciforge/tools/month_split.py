"""Partition a table into one file per calendar month, named YYYY-MM.csv."""

from __future__ import annotations

import sys
from pathlib import Path

from ._proto import ToolUsageError, read_table, tool_main, write_table
from ._temporal import detect_time_fields


def run(inputs: list[str], params: dict, outputs: list[str]):
    if len(inputs) != 1 or len(outputs) != 1:
        raise ToolUsageError("expected one input table and one output directory")
    header, rows = read_table(inputs[0])
    if not header:
        raise ToolUsageError("input table has no header")

    time_field = params.get("time_field")
    if not time_field:
        detected = detect_time_fields(header)
        if len(detected) == 1:
            time_field = detected[0]
        else:
            raise ToolUsageError(
                f"time_field param required; could not auto-detect from {header}"
            )
    if time_field not in header:
        raise ToolUsageError(f"time field {time_field!r} not in header {header}")
    col = header.index(time_field)

    by_month: dict[str, list[list[str]]] = {}
    for row in rows:
        value = row[col].strip()
        if len(value) < 7 or value[4] != "-":
            raise ToolUsageError(f"value {value!r} in {time_field!r} is not ISO-dated")
        by_month.setdefault(value[:7], []).append(row)

    out_dir = Path(outputs[0])
    out_dir.mkdir(parents=True, exist_ok=True)
    produced = []
    for month in sorted(by_month):
        path = out_dir / f"{month}.csv"
        write_table(path, header, by_month[month])
        produced.append(str(Path(outputs[0]) / f"{month}.csv"))

    return produced, {
        "rows_in": len(rows),
        "months": len(produced),
        "per_month_rows": {m: len(r) for m, r in sorted(by_month.items())},
    }


if __name__ == "__main__":
    sys.exit(tool_main(run))

"""Align one or more tables onto a common temporal granularity.

Each row's time is truncated to the target calendar bucket; rows that land in
the same bucket collapse to one (mean for numeric fields, first non-missing
otherwise). Rows that already sit alone on a bucket pass through verbatim.
"""

from __future__ import annotations

import sys
from pathlib import Path

from ._proto import (
    ToolUsageError,
    format_number,
    is_missing,
    parse_number,
    read_table,
    tool_main,
    write_table,
)
from ._temporal import BUCKET_KEY_NAME, bucket_of, detect_time_fields


def _align_one(path: str, granularity: str, time_fields: list[str] | None):
    header, rows = read_table(path)
    if not header:
        raise ToolUsageError(f"table {path} has no header")
    tf = time_fields or detect_time_fields(header)
    if not tf:
        raise ToolUsageError(f"no time fields found in {path} header {header}")
    value_fields = [h for h in header if h not in tf]
    idx = {h: i for i, h in enumerate(header)}

    buckets: dict[str, list[list[str]]] = {}
    for row in rows:
        key = bucket_of(row, header, tf, granularity)
        buckets.setdefault(key, []).append(row)

    key_name = BUCKET_KEY_NAME[granularity]
    out_header = [key_name] + value_fields
    out_rows = []
    for key in sorted(buckets):
        group = buckets[key]
        if len(group) == 1:
            out_rows.append([key] + [group[0][idx[f]] for f in value_fields])
            continue
        cells = [key]
        for f in value_fields:
            raw = [g[idx[f]] for g in group if not is_missing(g[idx[f]])]
            nums = [parse_number(c) for c in raw]
            if raw and all(n is not None for n in nums):
                cells.append(format_number(sum(nums) / len(nums)))
            elif raw:
                cells.append(raw[0])
            else:
                cells.append("")
        out_rows.append(cells)
    return out_header, out_rows


def run(inputs: list[str], params: dict, outputs: list[str]):
    if not inputs or len(outputs) != 1:
        raise ToolUsageError("expected >=1 input tables and one output directory")
    granularity = params.get("granularity", "daily")
    if granularity not in BUCKET_KEY_NAME:
        raise ToolUsageError(f"unknown granularity {granularity!r}")
    time_fields = params.get("time_fields")

    out_dir = Path(outputs[0])
    out_dir.mkdir(parents=True, exist_ok=True)
    produced = []
    stats = {"granularity": granularity, "tables": {}}
    for src in inputs:
        header, rows = _align_one(src, granularity, time_fields)
        name = f"aligned_{Path(src).stem}.csv"
        write_table(out_dir / name, header, rows)
        produced.append(str(Path(outputs[0]) / name))
        stats["tables"][Path(src).name] = len(rows)
    return produced, stats


if __name__ == "__main__":
    sys.exit(tool_main(run))

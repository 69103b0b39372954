"""Group table rows by calendar bucket and emit per-field arithmetic means.

Missing markers are ignored inside each bucket; a bucket where every value is
missing emits an empty cell rather than dropping the bucket.
"""

from __future__ import annotations

import sys

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


def run(inputs: list[str], params: dict, outputs: list[str]):
    if len(inputs) != 1 or len(outputs) != 1:
        raise ToolUsageError("expected one input table and one output path")
    granularity = params.get("granularity", "daily")
    if granularity not in BUCKET_KEY_NAME:
        raise ToolUsageError(f"unknown granularity {granularity!r}")
    header, rows = read_table(inputs[0])
    if not header:
        raise ToolUsageError("input table has no header")

    time_fields = params.get("time_fields") or detect_time_fields(header)
    if not time_fields:
        raise ToolUsageError(f"no time fields found in header {header}")
    value_fields = params.get("value_fields")
    if not value_fields:
        value_fields = [h for h in header if h not in time_fields]
    idx = {h: i for i, h in enumerate(header)}
    for f in value_fields:
        if f not in idx:
            raise ToolUsageError(f"value field {f!r} not in header")

    buckets: dict[str, dict[str, list[float]]] = {}
    for row in rows:
        key = bucket_of(row, header, time_fields, granularity)
        acc = buckets.setdefault(key, {f: [] for f in value_fields})
        for f in value_fields:
            cell = row[idx[f]]
            if is_missing(cell):
                continue
            num = parse_number(cell)
            if num is None:
                raise ToolUsageError(f"non-numeric value {cell!r} in field {f!r}")
            acc[f].append(num)

    key_name = BUCKET_KEY_NAME[granularity]
    out_header = [key_name] + list(value_fields)
    out_rows = []
    for key in sorted(buckets):
        cells = [key]
        for f in value_fields:
            vals = buckets[key][f]
            cells.append(format_number(sum(vals) / len(vals)) if vals else "")
        out_rows.append(cells)

    write_table(outputs[0], out_header, out_rows)
    return [outputs[0]], {
        "rows_in": len(rows),
        "buckets": len(out_rows),
        "granularity": granularity,
        "value_fields": list(value_fields),
    }


if __name__ == "__main__":
    sys.exit(tool_main(run))

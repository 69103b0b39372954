"""Inner-join tables on shared key fields; empty key intersection is a valid
empty result, not an error."""

from __future__ import annotations

import sys
from itertools import product

from ._proto import ToolUsageError, read_table, tool_main, write_table


def run(inputs: list[str], params: dict, outputs: list[str]):
    if len(inputs) < 2 or len(outputs) != 1:
        raise ToolUsageError("expected >=2 input tables and one output path")
    keys = params.get("keys", [])
    if not keys:
        raise ToolUsageError("keys param required")

    tables = []
    for path in inputs:
        header, rows = read_table(path)
        missing = [k for k in keys if k not in header]
        if missing:
            raise ToolUsageError(f"table {path} lacks join keys {missing}")
        tables.append((header, rows))

    out_header = list(keys)
    suffix_count: dict[str, int] = {}
    col_plan = []  # per table: list of (source index, output name)
    for header, _ in tables:
        plan = []
        for i, name in enumerate(header):
            if name in keys:
                continue
            n = suffix_count.get(name, 0) + 1
            suffix_count[name] = n
            plan.append((i, name if n == 1 else f"{name}_{n}"))
        col_plan.append(plan)
        out_header.extend(name for _, name in plan)

    def key_of(header, row):
        idx = {h: i for i, h in enumerate(header)}
        return tuple(row[idx[k]] for k in keys)

    groups = []
    for header, rows in tables:
        g: dict[tuple, list[list[str]]] = {}
        for row in rows:
            g.setdefault(key_of(header, row), []).append(row)
        groups.append(g)

    shared = set(groups[0])
    for g in groups[1:]:
        shared &= set(g)

    out_rows = []
    for key in sorted(shared):
        for combo in product(*(g[key] for g in groups)):
            cells = list(key)
            for row, plan in zip(combo, col_plan):
                cells.extend(row[i] for i, _ in plan)
            out_rows.append(cells)

    write_table(outputs[0], out_header, out_rows)
    return [outputs[0]], {"rows": len(out_rows), "matched_keys": len(shared)}


if __name__ == "__main__":
    sys.exit(tool_main(run))

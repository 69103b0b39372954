// Inner-join tables on shared key fields; an empty key intersection is a
// valid empty result, not an error.

import { Table, parseCsv, serializeCsv } from "../csv.js";
import { ToolResult, ToolUsageError, readTable, toolMain, writeFileMakingDirs } from "../proto.js";

export function run(
  inputs: string[],
  params: Record<string, unknown>,
  outputs: string[],
): ToolResult {
  if (inputs.length < 2 || outputs.length !== 1) {
    throw new ToolUsageError("expected >=2 input tables and one output path");
  }
  const keys = (params.keys as string[]) ?? [];
  if (!keys.length) throw new ToolUsageError("keys param required");

  const tables: Table[] = inputs.map((p) => {
    const t = parseCsv(readTable(p));
    const missing = keys.filter((k) => !t.header.includes(k));
    if (missing.length) {
      throw new ToolUsageError(`table ${p} lacks join keys [${missing.join(", ")}]`);
    }
    return t;
  });

  const outHeader = [...keys];
  const suffixCount = new Map<string, number>();
  const colPlans: Array<Array<[number, string]>> = [];
  for (const t of tables) {
    const plan: Array<[number, string]> = [];
    t.header.forEach((name, i) => {
      if (keys.includes(name)) return;
      const n = (suffixCount.get(name) ?? 0) + 1;
      suffixCount.set(name, n);
      plan.push([i, n === 1 ? name : `${name}_${n}`]);
    });
    colPlans.push(plan);
    outHeader.push(...plan.map(([, name]) => name));
  }

  const keyOf = (t: Table, row: string[]) =>
    JSON.stringify(keys.map((k) => row[t.header.indexOf(k)] ?? ""));

  const groups = tables.map((t) => {
    const g = new Map<string, string[][]>();
    for (const row of t.rows) {
      const k = keyOf(t, row);
      if (!g.has(k)) g.set(k, []);
      g.get(k)!.push(row);
    }
    return g;
  });

  let shared = new Set(groups[0].keys());
  for (const g of groups.slice(1)) {
    shared = new Set([...shared].filter((k) => g.has(k)));
  }

  const outRows: string[][] = [];
  for (const key of [...shared].sort()) {
    const combos: string[][][] = groups.map((g) => g.get(key)!);
    const walk = (i: number, acc: string[][]) => {
      if (i === combos.length) {
        const cells = [...(JSON.parse(key) as string[])];
        acc.forEach((row, t) => {
          cells.push(...colPlans[t].map(([ci]) => row[ci] ?? ""));
        });
        outRows.push(cells);
        return;
      }
      for (const row of combos[i]) walk(i + 1, [...acc, row]);
    };
    walk(0, []);
  }

  writeFileMakingDirs(outputs[0], serializeCsv({ header: outHeader, rows: outRows }));
  return { outputs: [outputs[0]], stats: { rows: outRows.length, matched_keys: shared.size } };
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(toolMain(run));
}

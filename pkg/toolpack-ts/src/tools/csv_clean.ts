// Normalize a table: unify missing markers, strip cell padding, drop
// malformed rows (wrong column count).

import { isMissing, parseCsv, serializeCsv } from "../csv.js";
import { ToolResult, ToolUsageError, readTable, toolMain, writeFileMakingDirs } from "../proto.js";

export function run(
  inputs: string[],
  params: Record<string, unknown>,
  outputs: string[],
): ToolResult {
  if (inputs.length !== 1 || outputs.length !== 1) {
    throw new ToolUsageError("expected one input table and one output path");
  }
  const delayMs = Number(params.delay_ms ?? 0);
  if (delayMs > 0) {
    const until = Date.now() + delayMs;
    while (Date.now() < until) {
      // deliberate busy wait; tools are synchronous single-shot processes
    }
  }
  const table = parseCsv(readTable(inputs[0]));
  if (table.header.length === 0) throw new ToolUsageError("input table is empty");

  const cleaned: string[][] = [];
  let normalized = 0;
  let dropped = 0;
  for (const row of table.rows) {
    if (row.length !== table.header.length) {
      dropped += 1;
      continue;
    }
    cleaned.push(row.map((cell) => {
      const c = cell.trim();
      if (c !== "" && isMissing(c)) {
        normalized += 1;
        return "";
      }
      return c;
    }));
  }

  writeFileMakingDirs(outputs[0], serializeCsv({ header: table.header, rows: cleaned }));
  return {
    outputs: [outputs[0]],
    stats: {
      rows_in: table.rows.length,
      rows_out: cleaned.length,
      dropped_malformed: dropped,
      cells_normalized: normalized,
    },
  };
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(toolMain(run));
}

// Merge a semantic header file with a headerless records file into one table.

import { parseRows, serializeCsv } from "../csv.js";
import { ToolResult, ToolUsageError, readTable, toolMain, writeFileMakingDirs } from "../proto.js";

const DELIMS = [",", "\t", ";", "|"];

function headerNames(text: string): string[] {
  const lines = text.split("\n").filter((ln) => ln.trim() !== "");
  if (lines.length === 0) throw new ToolUsageError("header file is empty");
  const line = lines[0];
  let best = ",";
  let bestCount = -1;
  for (const d of DELIMS) {
    const count = line.split(d).length - 1;
    if (count > bestCount) {
      best = d;
      bestCount = count;
    }
  }
  return line.split(best).map((c) => c.trim());
}

export function run(
  inputs: string[],
  _params: Record<string, unknown>,
  outputs: string[],
): ToolResult {
  if (inputs.length !== 2) {
    throw new ToolUsageError(`expected [header, records] inputs, got ${inputs.length}`);
  }
  if (outputs.length !== 1) throw new ToolUsageError("expected exactly one output path");
  const names = headerNames(readTable(inputs[0]));
  const rows = parseRows(readTable(inputs[1]));
  for (const row of rows) {
    if (row.length !== names.length) {
      throw new ToolUsageError(
        `ColumnCountMismatch: header has ${names.length} columns, records row has ${row.length}`,
      );
    }
  }
  writeFileMakingDirs(outputs[0], serializeCsv({ header: names, rows }));
  return { outputs: [outputs[0]], stats: { rows: rows.length, columns: names.length } };
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(toolMain(run));
}

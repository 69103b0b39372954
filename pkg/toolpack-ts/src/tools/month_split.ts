// Partition a table into one file per calendar month, named YYYY-MM.csv.

import * as path from "node:path";

import { parseCsv, serializeCsv } from "../csv.js";
import { ToolResult, ToolUsageError, readTable, toolMain, writeFileMakingDirs } from "../proto.js";
import { detectTimeFields } from "../temporal.js";

export function run(
  inputs: string[],
  params: Record<string, unknown>,
  outputs: string[],
): ToolResult {
  if (inputs.length !== 1 || outputs.length !== 1) {
    throw new ToolUsageError("expected one input table and one output directory");
  }
  const table = parseCsv(readTable(inputs[0]));
  if (table.header.length === 0) throw new ToolUsageError("input table has no header");

  let timeField = params.time_field as string | undefined;
  if (!timeField) {
    const detected = detectTimeFields(table.header);
    if (detected.length !== 1) {
      throw new ToolUsageError(
        `time_field param required; could not auto-detect from [${table.header.join(", ")}]`,
      );
    }
    timeField = detected[0];
  }
  const col = table.header.indexOf(timeField);
  if (col < 0) throw new ToolUsageError(`time field ${JSON.stringify(timeField)} not in header`);

  const byMonth = new Map<string, string[][]>();
  for (const row of table.rows) {
    const value = (row[col] ?? "").trim();
    if (value.length < 7 || value[4] !== "-") {
      throw new ToolUsageError(`value ${JSON.stringify(value)} in ${JSON.stringify(timeField)} is not ISO-dated`);
    }
    const month = value.slice(0, 7);
    if (!byMonth.has(month)) byMonth.set(month, []);
    byMonth.get(month)!.push(row);
  }

  const produced: string[] = [];
  const perMonth: Record<string, number> = {};
  for (const month of [...byMonth.keys()].sort()) {
    const rel = path.join(outputs[0], `${month}.csv`);
    writeFileMakingDirs(rel, serializeCsv({ header: table.header, rows: byMonth.get(month)! }));
    produced.push(rel);
    perMonth[month] = byMonth.get(month)!.length;
  }

  return {
    outputs: produced,
    stats: { rows_in: table.rows.length, months: produced.length, per_month_rows: perMonth },
  };
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(toolMain(run));
}

// Group table rows by calendar bucket and emit per-field arithmetic means.
// Missing markers are ignored inside a bucket; an all-missing bucket emits an
// empty cell rather than dropping the bucket.

import { formatNumber, isMissing, parseCsv, parseNumber, serializeCsv } from "../csv.js";
import { ToolResult, ToolUsageError, readTable, toolMain, writeFileMakingDirs } from "../proto.js";
import { BUCKET_KEY_NAME, bucketOf, detectTimeFields } from "../temporal.js";

export function run(
  inputs: string[],
  params: Record<string, unknown>,
  outputs: string[],
): ToolResult {
  if (inputs.length !== 1 || outputs.length !== 1) {
    throw new ToolUsageError("expected one input table and one output path");
  }
  const granularity = (params.granularity as string) ?? "daily";
  if (!(granularity in BUCKET_KEY_NAME)) {
    throw new ToolUsageError(`unknown granularity ${JSON.stringify(granularity)}`);
  }
  const table = parseCsv(readTable(inputs[0]));
  if (table.header.length === 0) throw new ToolUsageError("input table has no header");

  const timeFields = (params.time_fields as string[]) ?? detectTimeFields(table.header);
  if (timeFields.length === 0) {
    throw new ToolUsageError(`no time fields found in header [${table.header.join(", ")}]`);
  }
  let valueFields = params.value_fields as string[] | undefined;
  if (!valueFields || valueFields.length === 0) {
    valueFields = table.header.filter((h) => !timeFields.includes(h));
  }
  const idx = new Map(table.header.map((h, i) => [h, i] as const));
  for (const f of valueFields) {
    if (!idx.has(f)) throw new ToolUsageError(`value field ${JSON.stringify(f)} not in header`);
  }

  const buckets = new Map<string, Map<string, number[]>>();
  for (const row of table.rows) {
    const key = bucketOf(row, table.header, timeFields, granularity);
    if (!buckets.has(key)) {
      buckets.set(key, new Map(valueFields.map((f) => [f, []] as const)));
    }
    const acc = buckets.get(key)!;
    for (const f of valueFields) {
      const cell = row[idx.get(f)!] ?? "";
      if (isMissing(cell)) continue;
      const num = parseNumber(cell);
      if (num === null) {
        throw new ToolUsageError(`non-numeric value ${JSON.stringify(cell)} in field ${JSON.stringify(f)}`);
      }
      acc.get(f)!.push(num);
    }
  }

  const keyName = BUCKET_KEY_NAME[granularity];
  const outHeader = [keyName, ...valueFields];
  const outRows: string[][] = [];
  for (const key of [...buckets.keys()].sort()) {
    const cells = [key];
    for (const f of valueFields) {
      const vals = buckets.get(key)!.get(f)!;
      cells.push(vals.length ? formatNumber(vals.reduce((a, b) => a + b, 0) / vals.length) : "");
    }
    outRows.push(cells);
  }

  writeFileMakingDirs(outputs[0], serializeCsv({ header: outHeader, rows: outRows }));
  return {
    outputs: [outputs[0]],
    stats: {
      rows_in: table.rows.length,
      buckets: outRows.length,
      granularity,
      value_fields: valueFields,
    },
  };
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(toolMain(run));
}

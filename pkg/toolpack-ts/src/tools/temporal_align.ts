// Align one or more tables onto a common temporal granularity: truncate each
// row's time to the target bucket; rows sharing a bucket collapse to one
// (mean for numerics, first non-missing otherwise).

import * as path from "node:path";

import { Table, formatNumber, isMissing, parseCsv, parseNumber, serializeCsv } from "../csv.js";
import { ToolResult, ToolUsageError, readTable, toolMain, writeFileMakingDirs } from "../proto.js";
import { BUCKET_KEY_NAME, bucketOf, detectTimeFields } from "../temporal.js";

function alignOne(table: Table, granularity: string, timeFields: string[] | undefined): Table {
  if (table.header.length === 0) throw new ToolUsageError("table has no header");
  const tf = timeFields && timeFields.length ? timeFields : detectTimeFields(table.header);
  if (tf.length === 0) {
    throw new ToolUsageError(`no time fields found in header [${table.header.join(", ")}]`);
  }
  const valueFields = table.header.filter((h) => !tf.includes(h));
  const idx = new Map(table.header.map((h, i) => [h, i] as const));

  const buckets = new Map<string, string[][]>();
  for (const row of table.rows) {
    const key = bucketOf(row, table.header, tf, granularity);
    if (!buckets.has(key)) buckets.set(key, []);
    buckets.get(key)!.push(row);
  }

  const outHeader = [BUCKET_KEY_NAME[granularity], ...valueFields];
  const outRows: string[][] = [];
  for (const key of [...buckets.keys()].sort()) {
    const group = buckets.get(key)!;
    if (group.length === 1) {
      outRows.push([key, ...valueFields.map((f) => group[0][idx.get(f)!] ?? "")]);
      continue;
    }
    const cells = [key];
    for (const f of valueFields) {
      const raw = group.map((g) => g[idx.get(f)!] ?? "").filter((c) => !isMissing(c));
      const nums = raw.map(parseNumber);
      if (raw.length > 0 && nums.every((n) => n !== null)) {
        const sum = (nums as number[]).reduce((a, b) => a + b, 0);
        cells.push(formatNumber(sum / nums.length));
      } else if (raw.length > 0) {
        cells.push(raw[0]);
      } else {
        cells.push("");
      }
    }
    outRows.push(cells);
  }
  return { header: outHeader, rows: outRows };
}

export function run(
  inputs: string[],
  params: Record<string, unknown>,
  outputs: string[],
): ToolResult {
  if (inputs.length === 0 || outputs.length !== 1) {
    throw new ToolUsageError("expected >=1 input tables and one output directory");
  }
  const granularity = (params.granularity as string) ?? "daily";
  if (!(granularity in BUCKET_KEY_NAME)) {
    throw new ToolUsageError(`unknown granularity ${JSON.stringify(granularity)}`);
  }
  const timeFields = params.time_fields as string[] | undefined;

  const produced: string[] = [];
  const tables: Record<string, number> = {};
  for (const src of inputs) {
    const aligned = alignOne(parseCsv(readTable(src)), granularity, timeFields);
    const stem = path.basename(src).replace(/\.[^.]*$/, "");
    const rel = path.join(outputs[0], `aligned_${stem}.csv`);
    writeFileMakingDirs(rel, serializeCsv(aligned));
    produced.push(rel);
    tables[path.basename(src)] = aligned.rows.length;
  }
  return { outputs: produced, stats: { granularity, tables } };
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(toolMain(run));
}

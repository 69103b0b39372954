// Rename table columns according to an explicit old->new mapping. Data lines
// pass through untouched so an identity mapping is byte-identical.

import { parseCsv, serializeCsv } from "../csv.js";
import { ToolResult, ToolUsageError, readTable, toolMain, writeFileMakingDirs } from "../proto.js";

export function run(
  inputs: string[],
  params: Record<string, unknown>,
  outputs: string[],
): ToolResult {
  if (inputs.length !== 1 || outputs.length !== 1) {
    throw new ToolUsageError("expected one input table and one output path");
  }
  const mapping = (params.mapping ?? {}) as Record<string, string>;
  if (typeof mapping !== "object" || Array.isArray(mapping)) {
    throw new ToolUsageError("mapping param must be an object");
  }
  const text = readTable(inputs[0]);
  const lines = text.split("\n");
  if (lines.length === 0 || lines[0].trim() === "") {
    throw new ToolUsageError("input table has no header");
  }
  const header = parseCsv(lines[0] + "\n").header;
  const unknown = Object.keys(mapping).filter((k) => !header.includes(k));
  if (unknown.length) {
    throw new ToolUsageError(`mapping names columns absent from header: [${unknown.join(", ")}]`);
  }
  const newHeader = header.map((h) => mapping[h] ?? h);
  const headerLine = serializeCsv({ header: newHeader, rows: [] });
  writeFileMakingDirs(outputs[0], headerLine + lines.slice(1).join("\n"));
  const renamed = header.filter((h) => (mapping[h] ?? h) !== h).length;
  return { outputs: [outputs[0]], stats: { renamed } };
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(toolMain(run));
}

// Emit tools.json: tool-lake descriptors for this pack, with commands bound
// to the compiled entry points, consumable by `sciforge kb add-tools`.

import * as fs from "node:fs";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

const distDir = path.dirname(fileURLToPath(import.meta.url));

interface Slot {
  modality: string;
  schema_pattern: string[];
}

const tab: Slot = { modality: "tabular", schema_pattern: [] };

function descriptor(
  id: string,
  capability: string,
  tags: string[],
  nInputs: number,
  timeoutS: number,
) {
  return {
    id: `ts_${id}`,
    capability,
    capability_tags: tags,
    input_contract: Array.from({ length: nInputs }, () => ({ ...tab })),
    output_contract: [{ ...tab }],
    dependencies: ["node>=20"],
    timeout_s: timeoutS,
    memory_hint_mb: 256,
    applicable_modalities: ["tabular"],
    command: ["node", path.join(distDir, "tools", `${id}.js`)],
    protocol: "manifest-v1",
    order_after: [],
    summary: "typescript tool pack",
  };
}

const tools = [
  descriptor("header_merge",
    "merge header and records files into one table with semantic column names",
    ["map_schema"], 2, 60),
  descriptor("temporal_aggregate",
    "compute daily or monthly averages of hourly values grouped by calendar bucket",
    ["aggregate"], 1, 120),
  descriptor("month_split",
    "split table outputs by month into one file per calendar month",
    ["split"], 1, 60),
  descriptor("temporal_align",
    "align tables onto one common temporal granularity",
    ["align_temporal"], 1, 120),
  descriptor("schema_map",
    "map and rename table columns onto a target schema",
    ["map_schema"], 1, 60),
  descriptor("table_join",
    "join tables on shared key fields into one table",
    ["join"], 2, 120),
  descriptor("csv_clean",
    "clean table cells, unify missing markers, drop malformed rows",
    ["clean"], 1, 60),
];

const outPath = process.argv[2] ?? path.join(distDir, "..", "tools.json");
fs.writeFileSync(outPath, JSON.stringify(tools, null, 2) + "\n", "utf-8");
console.log(`wrote ${tools.length} tool descriptors to ${outPath}`);

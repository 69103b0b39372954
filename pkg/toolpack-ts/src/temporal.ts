// Time-field detection and calendar bucketing shared by the temporal tools.

import { isMissing } from "./csv.js";
import { ToolUsageError } from "./proto.js";

const COMPOSITE_ORDER = ["year", "month", "day", "hour"];
const SINGLE_TIME_NAMES = new Set(["date", "time", "timestamp", "datetime"]);
const ISO_RE = /^(\d{4})-(\d{2})(?:-(\d{2}))?(?:[ T](\d{2}):(\d{2})(?::(\d{2}))?)?$/;

export const BUCKET_KEY_NAME: Record<string, string> = {
  hourly: "time",
  daily: "date",
  monthly: "month",
  yearly: "year",
};

export function detectTimeFields(header: string[]): string[] {
  const lower = new Map<string, string>();
  for (const name of header) lower.set(name.toLowerCase(), name);
  const composite = COMPOSITE_ORDER.filter((n) => lower.has(n)).map((n) => lower.get(n)!);
  if (lower.has("year") && (lower.has("month") || lower.has("day"))) {
    return composite;
  }
  for (const name of header) {
    if (SINGLE_TIME_NAMES.has(name.toLowerCase())) return [name];
  }
  return [];
}

function pad(value: string): string {
  const v = value.trim();
  return v.length === 1 ? "0" + v : v;
}

export function bucketOf(
  row: string[],
  header: string[],
  timeFields: string[],
  granularity: string,
): string {
  const idx = new Map(header.map((h, i) => [h, i] as const));
  for (const f of timeFields) {
    if (!idx.has(f)) throw new ToolUsageError(`time field ${JSON.stringify(f)} not in header`);
  }
  const values = timeFields.map((f) => row[idx.get(f)!]?.trim() ?? "");
  if (values.some(isMissing)) throw new ToolUsageError(`missing time value in row: ${row.join(",")}`);

  let year: string, month: string, day: string, hour: string;
  if (timeFields.length === 1) {
    const m = ISO_RE.exec(values[0]);
    if (!m) throw new ToolUsageError(`unparseable time value ${JSON.stringify(values[0])}`);
    [year, month, day, hour] = [m[1], m[2], m[3] ?? "01", m[4] ?? "00"];
  } else {
    const named = new Map(timeFields.map((f, i) => [f.toLowerCase(), values[i]] as const));
    if (!named.has("year")) throw new ToolUsageError(`composite time fields lack a year column`);
    year = named.get("year")!;
    month = pad(named.get("month") ?? "01");
    day = pad(named.get("day") ?? "01");
    hour = pad(named.get("hour") ?? "00");
  }

  switch (granularity) {
    case "yearly":
      return year;
    case "monthly":
      return `${year}-${month}`;
    case "daily":
      return `${year}-${month}-${day}`;
    case "hourly":
      return `${year}-${month}-${day}T${hour}:00`;
    default:
      throw new ToolUsageError(`unknown granularity ${JSON.stringify(granularity)}`);
  }
}

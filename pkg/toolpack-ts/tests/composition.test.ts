// End-to-end composition: header_merge -> temporal_aggregate -> month_split
// over a year-scale hourly fixture with a separated header file, checked
// against a brute-force oracle (daily means within 1e-9 absolute; monthly
// files exactly partition the daily rows).

import { describe, expect, it } from "vitest";
import * as fs from "node:fs";
import * as path from "node:path";

import { invoke, readCsv, readResult, rowsAsObjects, tempDir } from "./helpers.js";

const FIELDS = ["YEAR", "MONTH", "DAY", "HOUR", "TEMP_C", "WIND_MS", "PRESSURE_HPA"];
const VALUE_FIELDS = ["TEMP_C", "WIND_MS", "PRESSURE_HPA"];

function daysInMonth(year: number, month: number): number {
  return new Date(Date.UTC(year, month, 0)).getUTCDate();
}

interface Fixture {
  rows: number;
  dailyMeans: Map<string, Map<string, number | null>>;
  monthDays: Map<string, number>;
}

function makeFixture(dir: string, months: number): Fixture {
  fs.mkdirSync(dir, { recursive: true });
  fs.writeFileSync(path.join(dir, "header.csv"), FIELDS.join(",") + "\n");

  let seed = 987654321;
  const rand = () => {
    seed = (seed * 1103515245 + 12345) % 2147483648;
    return seed / 2147483648;
  };

  const lines: string[] = [];
  const sums = new Map<string, Map<string, { sum: number; count: number }>>();
  const monthDays = new Map<string, number>();
  let cellNo = 0;
  let rows = 0;
  for (let month = 1; month <= months; month++) {
    const monthKey = `2005-${String(month).padStart(2, "0")}`;
    const days = daysInMonth(2005, month);
    monthDays.set(monthKey, days);
    for (let day = 1; day <= days; day++) {
      const date = `${monthKey}-${String(day).padStart(2, "0")}`;
      for (let hour = 0; hour < 24; hour++) {
        const cells = [String(2005), String(month), String(day), String(hour)];
        for (const field of VALUE_FIELDS) {
          cellNo += 1;
          if (cellNo % 97 === 0) {
            cells.push("NaN");
            continue;
          }
          const value = Math.round((rand() * 80 - 50) * 100) / 100;
          cells.push(String(value));
          if (!sums.has(date)) sums.set(date, new Map());
          const acc = sums.get(date)!;
          if (!acc.has(field)) acc.set(field, { sum: 0, count: 0 });
          acc.get(field)!.sum += value;
          acc.get(field)!.count += 1;
        }
        lines.push(cells.join(","));
        rows += 1;
      }
    }
  }
  fs.writeFileSync(path.join(dir, "records.csv"), lines.join("\n") + "\n");

  const dailyMeans = new Map<string, Map<string, number | null>>();
  for (const [date, acc] of sums) {
    const means = new Map<string, number | null>();
    for (const field of VALUE_FIELDS) {
      const entry = acc.get(field);
      means.set(field, entry && entry.count > 0 ? entry.sum / entry.count : null);
    }
    dailyMeans.set(date, means);
  }
  return { rows, dailyMeans, monthDays };
}

describe("header_merge -> temporal_aggregate -> month_split composition", () => {
  it("reproduces the brute-force oracle over a 12-month hourly year", () => {
    const base = tempDir("composition-");
    const fixture = makeFixture(path.join(base, "marble"), 12);
    expect(fixture.rows).toBe(8760);

    // stage 1: merge header and records
    const w1 = path.join(base, "w1");
    let proc = invoke("header_merge", w1,
      ["../marble/header.csv", "../marble/records.csv"], {}, ["merged.csv"]);
    expect(proc.status, proc.stderr).toBe(0);
    expect(readCsv(path.join(w1, "merged.csv")).rows.length).toBe(8760);

    // stage 2: compute daily averages from hourly values
    const w2 = path.join(base, "w2");
    proc = invoke("temporal_aggregate", w2,
      ["../w1/merged.csv"], { granularity: "daily" }, ["daily.csv"]);
    expect(proc.status, proc.stderr).toBe(0);
    const daily = rowsAsObjects(readCsv(path.join(w2, "daily.csv")));
    expect(daily.length).toBe(365);

    let checked = 0;
    for (const row of daily) {
      const expected = fixture.dailyMeans.get(row.date)!;
      for (const field of VALUE_FIELDS) {
        const want = expected.get(field)!;
        if (want === null) {
          expect(row[field]).toBe("");
        } else {
          expect(Math.abs(Number(row[field]) - want)).toBeLessThan(1e-9);
          checked += 1;
        }
      }
    }
    expect(checked).toBeGreaterThan(1000);

    // stage 3: split outputs by month
    const w3 = path.join(base, "w3");
    proc = invoke("month_split", w3,
      ["../w2/daily.csv"], { time_field: "date" }, ["out"]);
    expect(proc.status, proc.stderr).toBe(0);
    const produced = readResult(w3).outputs;
    expect(produced.length).toBe(12);

    // the monthly files exactly partition the daily rows
    const seenDates: string[] = [];
    for (const rel of produced) {
      const month = path.basename(rel, ".csv");
      const rows = rowsAsObjects(readCsv(path.join(w3, rel)));
      expect(rows.length).toBe(fixture.monthDays.get(month));
      for (const row of rows) {
        expect(row.date.startsWith(month)).toBe(true);
        seenDates.push(row.date);
      }
    }
    expect(seenDates.length).toBe(365);
    expect(new Set(seenDates).size).toBe(365);
    expect(new Set(seenDates)).toEqual(new Set(fixture.dailyMeans.keys()));
  });
});

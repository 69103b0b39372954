import { execFileSync, spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

const here = path.dirname(fileURLToPath(import.meta.url));
export const DIST_TOOLS = path.join(here, "..", "dist", "tools");

export interface Invocation {
  status: number;
  stdout: string;
  stderr: string;
  workdir: string;
}

export function tempDir(prefix = "toolpack-"): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

export function spawnTool(tool: string, workdir: string, args: string[]): Invocation {
  const proc = spawnSync("node", [path.join(DIST_TOOLS, `${tool}.js`), ...args], {
    cwd: workdir,
    encoding: "utf-8",
  });
  return {
    status: proc.status ?? -1,
    stdout: proc.stdout ?? "",
    stderr: proc.stderr ?? "",
    workdir,
  };
}

export function invoke(
  tool: string,
  workdir: string,
  inputs: string[],
  params: Record<string, unknown>,
  outputs: string[],
  extraArgs: string[] = [],
): Invocation {
  fs.mkdirSync(workdir, { recursive: true });
  fs.writeFileSync(
    path.join(workdir, "task.json"),
    JSON.stringify({ inputs, params, outputs }),
    "utf-8",
  );
  return spawnTool(tool, workdir, [...extraArgs, "task.json"]);
}

export function readResult(workdir: string): { outputs: string[]; stats: Record<string, unknown> } {
  return JSON.parse(fs.readFileSync(path.join(workdir, "result.json"), "utf-8"));
}

export interface ParsedCsv {
  header: string[];
  rows: string[][];
}

export function readCsv(filePath: string): ParsedCsv {
  const lines = fs
    .readFileSync(filePath, "utf-8")
    .split("\n")
    .filter((ln) => ln.trim() !== "");
  const header = lines[0]?.split(",") ?? [];
  return { header, rows: lines.slice(1).map((ln) => ln.split(",")) };
}

export function rowsAsObjects(parsed: ParsedCsv): Record<string, string>[] {
  return parsed.rows.map((row) =>
    Object.fromEntries(parsed.header.map((h, i) => [h, row[i] ?? ""])),
  );
}

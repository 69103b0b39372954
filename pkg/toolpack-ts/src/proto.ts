// manifest-v1 plumbing: the engine writes task.json into a fresh workdir and
// invokes `command task.json` with cwd set there; the tool exits 0 and writes
// result.json listing exactly the files it produced. Any validation problem
// exits nonzero before anything is written.

import * as fs from "node:fs";
import * as path from "node:path";

export interface Task {
  inputs: string[];
  params: Record<string, unknown>;
  outputs: string[];
}

export interface ToolResult {
  outputs: string[];
  stats: Record<string, unknown>;
}

// domain-level failure (bad inputs for this tool); exit code 4
export class ToolUsageError extends Error {}

export function readTask(taskPath: string): Task {
  const doc = JSON.parse(fs.readFileSync(taskPath, "utf-8"));
  if (typeof doc !== "object" || doc === null) throw new Error("task document must be an object");
  const { inputs, params, outputs } = doc as Record<string, unknown>;
  if (!Array.isArray(inputs) || !inputs.every((x) => typeof x === "string")) {
    throw new Error("inputs must be a list of paths");
  }
  if (typeof params !== "object" || params === null || Array.isArray(params)) {
    throw new Error("params must be an object");
  }
  if (!Array.isArray(outputs) || !outputs.every((x) => typeof x === "string")) {
    throw new Error("outputs must be a list of paths");
  }
  return { inputs, params: params as Record<string, unknown>, outputs };
}

export function readTable(filePath: string): string {
  if (!fs.existsSync(filePath)) throw new ToolUsageError(`input table missing: ${filePath}`);
  return fs.readFileSync(filePath, "utf-8");
}

export function writeFileMakingDirs(filePath: string, text: string): void {
  fs.mkdirSync(path.dirname(path.resolve(filePath)), { recursive: true });
  fs.writeFileSync(filePath, text, "utf-8");
}

function consumeCounter(counterPath: string): number {
  let count = 0;
  if (fs.existsSync(counterPath)) {
    const raw = fs.readFileSync(counterPath, "utf-8").trim();
    const parsed = parseInt(raw || "0", 10);
    if (!Number.isNaN(parsed)) count = parsed;
  }
  count += 1;
  fs.mkdirSync(path.dirname(path.resolve(counterPath)), { recursive: true });
  fs.writeFileSync(counterPath, String(count), "utf-8");
  return count;
}

export type Handler = (
  inputs: string[],
  params: Record<string, unknown>,
  outputs: string[],
) => ToolResult;

export function toolMain(handler: Handler, argv: string[] = process.argv.slice(2)): number {
  let failTimes = 0;
  let counter = "fail_counter.txt";
  let taskPath: string | null = null;
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--fail-times") {
      failTimes = parseInt(argv[++i], 10);
    } else if (argv[i] === "--counter") {
      counter = argv[++i];
    } else if (!taskPath) {
      taskPath = argv[i];
    }
  }
  if (!taskPath) {
    process.stderr.write("usage: tool [--fail-times N --counter PATH] task.json\n");
    return 2;
  }

  if (failTimes > 0) {
    const n = consumeCounter(counter);
    if (n <= failTimes) {
      process.stderr.write(`injected failure ${n}/${failTimes}\n`);
      return 3;
    }
  }

  let task: Task;
  try {
    task = readTask(taskPath);
  } catch (err) {
    process.stderr.write(`invalid task: ${(err as Error).message}\n`);
    return 2;
  }

  let result: ToolResult;
  try {
    result = handler(task.inputs, task.params, task.outputs);
  } catch (err) {
    if (err instanceof ToolUsageError) {
      process.stderr.write(`${err.message}\n`);
      return 4;
    }
    process.stderr.write(`${(err as Error).stack ?? err}\n`);
    return 1;
  }

  fs.writeFileSync("result.json", JSON.stringify(result, null, 2) + "\n", "utf-8");
  return 0;
}

// CSV dialect shared with the engine: comma-separated, header row, UTF-8,
// "\n" line endings. Missing values: empty cell or a NaN-ish token on input,
// empty cell on output.

export const MISSING_TOKENS = new Set(["", "nan", "na", "null", "none"]);

export function isMissing(cell: string): boolean {
  return MISSING_TOKENS.has(cell.trim().toLowerCase());
}

export function parseNumber(cell: string): number | null {
  const trimmed = cell.trim();
  if (trimmed === "") return null;
  const value = Number(trimmed);
  return Number.isFinite(value) ? value : null;
}

function splitLine(line: string): string[] {
  const cells: string[] = [];
  let current = "";
  let quoted = false;
  for (let i = 0; i < line.length; i++) {
    const ch = line[i];
    if (quoted) {
      if (ch === '"') {
        if (line[i + 1] === '"') {
          current += '"';
          i++;
        } else {
          quoted = false;
        }
      } else {
        current += ch;
      }
    } else if (ch === '"') {
      quoted = true;
    } else if (ch === ",") {
      cells.push(current);
      current = "";
    } else {
      current += ch;
    }
  }
  cells.push(current);
  return cells;
}

function escapeCell(cell: string): string {
  if (/[",\n]/.test(cell)) {
    return '"' + cell.replace(/"/g, '""') + '"';
  }
  return cell;
}

export interface Table {
  header: string[];
  rows: string[][];
}

export function parseCsv(text: string): Table {
  const lines = text.split("\n").filter((ln) => ln.trim() !== "");
  if (lines.length === 0) return { header: [], rows: [] };
  const header = splitLine(lines[0]).map((c) => c.trim());
  const rows = lines.slice(1).map(splitLine);
  return { header, rows };
}

// every line is a data row (no header line)
export function parseRows(text: string): string[][] {
  return text
    .split("\n")
    .filter((ln) => ln.trim() !== "")
    .map(splitLine);
}

export function serializeCsv(table: Table): string {
  const lines = [table.header.map(escapeCell).join(",")];
  for (const row of table.rows) {
    lines.push(row.map(escapeCell).join(","));
  }
  return lines.join("\n") + "\n";
}

export function columnIndex(header: string[], names: string[]): Map<string, number> {
  const index = new Map<string, number>();
  for (const name of names) {
    const i = header.indexOf(name);
    if (i < 0) throw new Error(`column ${JSON.stringify(name)} not in header [${header.join(", ")}]`);
    index.set(name, i);
  }
  return index;
}

export function formatNumber(value: number): string {
  // String(Number) is the shortest round-trip decimal in JS
  return String(value);
}

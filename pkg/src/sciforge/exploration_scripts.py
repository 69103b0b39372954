'''Self-contained exploration script bodies, one per detected file kind.

The deterministic planner backend hands these out verbatim when asked to
synthesize an exploration script. Each body is a standalone program invoked
as ``python script.py <data-file>`` inside a sandbox; it must print a single
JSON descriptor document to stdout::

    {"fields": [{"name", "type", "min"?, "max"?, "mean"?, "cardinality"?,
                 "missing_frac"}], "row_count", "sample_rows"}

and exit nonzero with diagnostics on stderr when the file cannot be parsed.
'''

from __future__ import annotations

TABLE_SCRIPT = r'''
import csv, io, json, sys

MISSING = {"", "nan", "na", "null", "none"}
DELIMS = [",", "\t", ";", "|"]


def is_missing(cell):
    return cell.strip().lower() in MISSING


def as_float(cell):
    try:
        return float(cell)
    except ValueError:
        return None


def main():
    path = sys.argv[1]
    with open(path, "r", encoding="utf-8", errors="replace", newline="") as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        print(json.dumps({"fields": [], "row_count": 0, "sample_rows": []}))
        return
    # pick the delimiter with the highest consistent per-line count
    best, best_count = ",", 0
    for d in DELIMS:
        counts = [ln.count(d) for ln in lines[:50]]
        if counts and min(counts) == max(counts) and counts[0] > best_count:
            best, best_count = d, counts[0]
    rows = [r for r in csv.reader(io.StringIO(text), delimiter=best) if any(c.strip() for c in r)]
    width = max(len(r) for r in rows)
    rows = [r + [""] * (width - len(r)) for r in rows]

    first_all_text = all(not is_missing(c) and as_float(c) is None for c in rows[0])
    has_header = first_all_text
    names = [c.strip() for c in rows[0]] if has_header else ["col_%d" % i for i in range(width)]
    data = rows[1:] if has_header else rows

    fields = []
    for i, name in enumerate(names):
        col = [r[i] for r in data]
        present = [c for c in col if not is_missing(c)]
        nums = [as_float(c) for c in present]
        numeric = bool(present) and all(v is not None for v in nums)
        if numeric:
            ints = all(float(v).is_integer() and "." not in c and "e" not in c.lower()
                       for v, c in zip(nums, present))
            ftype = "int" if ints else "float"
        else:
            ftype = "str"
        spec = {"name": name, "type": ftype,
                "missing_frac": (len(col) - len(present)) / len(col) if col else 0.0}
        if numeric and nums:
            spec["min"] = min(nums)
            spec["max"] = max(nums)
            spec["mean"] = sum(nums) / len(nums)
        else:
            spec["cardinality"] = len(set(present))
        fields.append(spec)

    doc = {"fields": fields, "row_count": len(data),
           "sample_rows": [list(r) for r in data[:5]]}
    print(json.dumps(doc, allow_nan=False))


main()
'''

TENSOR_SCRIPT = r'''
import json, sys


def describe_array(arr):
    import numpy as np
    fields = []
    for i, size in enumerate(arr.shape):
        fields.append({"name": "axis_%d" % i, "type": "dim", "min": int(size),
                       "max": int(size), "missing_frac": 0.0})
    flat = arr.ravel()
    spec = {"name": "values", "type": str(arr.dtype), "missing_frac": 0.0}
    if flat.size and np.issubdtype(arr.dtype, np.number):
        finite = flat[np.isfinite(flat.astype(float))]
        spec["missing_frac"] = 1.0 - (finite.size / flat.size)
        if finite.size:
            spec["min"] = float(finite.min())
            spec["max"] = float(finite.max())
            spec["mean"] = float(finite.mean())
    fields.append(spec)
    row_count = int(arr.shape[0]) if arr.ndim else 1
    return {"fields": fields, "row_count": row_count, "sample_rows": []}


def main():
    path = sys.argv[1]
    if path.endswith(".npy"):
        import numpy as np
        arr = np.load(path, allow_pickle=False)
        doc = describe_array(arr)
    elif path.endswith(".pkl"):
        import pickle
        with open(path, "rb") as fh:
            obj = pickle.load(fh)
        try:
            import numpy as np
            if isinstance(obj, np.ndarray):
                doc = describe_array(obj)
            else:
                raise TypeError
        except TypeError:
            n = len(obj) if hasattr(obj, "__len__") else 1
            doc = {"fields": [{"name": "object", "type": type(obj).__name__,
                               "missing_frac": 0.0, "cardinality": 1}],
                   "row_count": n, "sample_rows": []}
    else:
        raise ValueError("unsupported tensor container: %s" % path)
    print(json.dumps(doc, allow_nan=False))


main()
'''

SEQUENCE_SCRIPT = r'''
import json, sys


def describe_fasta(text):
    records = []
    rid, seq = None, []
    for line in text.splitlines():
        if line.startswith(">"):
            if rid is not None:
                records.append((rid, "".join(seq)))
            rid, seq = line[1:].strip(), []
        elif line.strip():
            seq.append(line.strip())
    if rid is not None:
        records.append((rid, "".join(seq)))
    if not records:
        raise ValueError("no fasta records found")
    fields = [
        {"name": "id", "type": "str", "missing_frac": 0.0,
         "cardinality": len(set(r[0] for r in records))},
        {"name": "sequence", "type": "str", "missing_frac": 0.0,
         "cardinality": len(set(r[1] for r in records))},
    ]
    return {"fields": fields, "row_count": len(records),
            "sample_rows": [[r[0], r[1]] for r in records[:5]]}


def describe_json(obj):
    if isinstance(obj, list) and obj and all(isinstance(x, dict) for x in obj):
        names = []
        for x in obj:
            for k in x:
                if k not in names:
                    names.append(k)
        fields = []
        for name in names:
            col = [x.get(name) for x in obj]
            present = [v for v in col if v is not None]
            nums = [v for v in present if isinstance(v, (int, float)) and not isinstance(v, bool)]
            spec = {"name": name, "missing_frac": (len(col) - len(present)) / len(col)}
            if present and len(nums) == len(present):
                spec["type"] = "float" if any(isinstance(v, float) for v in nums) else "int"
                spec["min"] = float(min(nums))
                spec["max"] = float(max(nums))
                spec["mean"] = sum(float(v) for v in nums) / len(nums)
            else:
                spec["type"] = "str"
                spec["cardinality"] = len(set(str(v) for v in present))
            fields.append(spec)
        samples = [[("" if x.get(n) is None else x.get(n)) for n in names] for x in obj[:5]]
        return {"fields": fields, "row_count": len(obj), "sample_rows": samples}
    if isinstance(obj, list):
        vals = [str(v) for v in obj]
        fields = [{"name": "value", "type": "str", "missing_frac": 0.0,
                   "cardinality": len(set(vals))}]
        return {"fields": fields, "row_count": len(obj),
                "sample_rows": [[v] for v in vals[:5]]}
    if isinstance(obj, dict):
        names = list(obj.keys())
        fields = [{"name": n, "type": "str", "missing_frac": 0.0, "cardinality": 1}
                  for n in names]
        return {"fields": fields, "row_count": 1,
                "sample_rows": [[str(obj[n]) for n in names]]}
    raise ValueError("unsupported json shape")


def main():
    path = sys.argv[1]
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith(">"):
        doc = describe_fasta(text)
    else:
        doc = describe_json(json.loads(text))
    print(json.dumps(doc, allow_nan=False))


main()
'''

TEXT_SCRIPT = r'''
import json, sys


def main():
    path = sys.argv[1]
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        lines = fh.read().splitlines()
    fields = [{"name": "line", "type": "str", "missing_frac": 0.0,
               "cardinality": len(set(lines))}]
    doc = {"fields": fields, "row_count": len(lines),
           "sample_rows": [[ln] for ln in lines[:5]]}
    print(json.dumps(doc, allow_nan=False))


main()
'''

SCRIPTS_BY_KIND = {
    "table": TABLE_SCRIPT,
    "tensor": TENSOR_SCRIPT,
    "sequence": SEQUENCE_SCRIPT,
    "text": TEXT_SCRIPT,
}

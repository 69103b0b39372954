"""Builtin tool pack: manifest-v1 conformance, numerics vs brute-force
oracles, determinism, and fault injection."""

from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

ALL_TOOLS = [
    "header_merge", "temporal_aggregate", "month_split",
    "temporal_align", "schema_map", "table_join", "csv_clean",
]


def invoke(tool: str, workdir: Path, inputs, params, outputs, extra_args=()):
    workdir.mkdir(parents=True, exist_ok=True)
    task = workdir / "task.json"
    task.write_text(json.dumps({"inputs": inputs, "params": params, "outputs": outputs}))
    proc = subprocess.run(
        [sys.executable, "-m", f"sciforge.tools.{tool}", *extra_args, "task.json"],
        cwd=workdir, capture_output=True, text=True,
    )
    return proc


def read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- header_merge -------------------------------------------------------------

def test_header_merge_happy(tmp_path):
    (tmp_path / "h.csv").write_text("A,B,C,D,E\n")
    (tmp_path / "r.csv").write_text("1,2,3,4,5\n6,7,8,9,10\n")
    proc = invoke("header_merge", tmp_path / "w", ["../h.csv", "../r.csv"], {}, ["m.csv"])
    assert proc.returncode == 0
    rows = read_rows(tmp_path / "w" / "m.csv")
    assert [r["A"] for r in rows] == ["1", "6"]
    result = json.loads((tmp_path / "w" / "result.json").read_text())
    assert result["outputs"] == ["m.csv"]
    assert result["stats"]["rows"] == 2


def test_header_merge_column_count_mismatch(tmp_path):
    (tmp_path / "h.csv").write_text("A,B,C,D\n")
    (tmp_path / "r.csv").write_text("1,2,3,4,5\n")
    proc = invoke("header_merge", tmp_path / "w", ["../h.csv", "../r.csv"], {}, ["m.csv"])
    assert proc.returncode == 4
    assert "ColumnCountMismatch" in proc.stderr
    assert not (tmp_path / "w" / "m.csv").exists()
    assert not (tmp_path / "w" / "result.json").exists()


def test_header_merge_empty_records(tmp_path):
    (tmp_path / "h.csv").write_text("A,B\n")
    (tmp_path / "r.csv").write_text("")
    proc = invoke("header_merge", tmp_path / "w", ["../h.csv", "../r.csv"], {}, ["m.csv"])
    assert proc.returncode == 0
    assert (tmp_path / "w" / "m.csv").read_text() == "A,B\n"


# --- temporal_aggregate ---------------------------------------------------------

def test_daily_mean_of_constant_day(tmp_path):
    lines = ["YEAR,MONTH,DAY,HOUR,V"] + [f"2005,3,7,{h},5.0" for h in range(24)]
    (tmp_path / "t.csv").write_text("\n".join(lines) + "\n")
    proc = invoke("temporal_aggregate", tmp_path / "w", ["../t.csv"],
                  {"granularity": "daily"}, ["agg.csv"])
    assert proc.returncode == 0
    rows = read_rows(tmp_path / "w" / "agg.csv")
    assert len(rows) == 1
    assert rows[0]["date"] == "2005-03-07"
    assert float(rows[0]["V"]) == 5.0


def test_month_of_hourly_rows_matches_brute_force(tmp_path):
    import random
    rng = random.Random(3)
    lines = ["YEAR,MONTH,DAY,HOUR,V"]
    oracle: dict[str, list[float]] = {}
    for day in range(1, 31):
        for hour in range(24):
            v = round(rng.uniform(-10, 10), 4)
            lines.append(f"2005,6,{day},{hour},{v}")
            oracle.setdefault(f"2005-06-{day:02d}", []).append(v)
    (tmp_path / "t.csv").write_text("\n".join(lines) + "\n")
    proc = invoke("temporal_aggregate", tmp_path / "w", ["../t.csv"],
                  {"granularity": "daily"}, ["agg.csv"])
    assert proc.returncode == 0
    rows = read_rows(tmp_path / "w" / "agg.csv")
    assert len(rows) == 30
    for r in rows:
        expected = sum(oracle[r["date"]]) / len(oracle[r["date"]])
        assert abs(float(r["V"]) - expected) < 1e-9


def test_all_missing_bucket_emits_empty_cell(tmp_path):
    lines = ["YEAR,MONTH,DAY,HOUR,V"]
    lines += [f"2005,1,1,{h},NaN" for h in range(24)]
    lines += [f"2005,1,2,{h},2.0" for h in range(24)]
    (tmp_path / "t.csv").write_text("\n".join(lines) + "\n")
    proc = invoke("temporal_aggregate", tmp_path / "w", ["../t.csv"],
                  {"granularity": "daily"}, ["agg.csv"])
    assert proc.returncode == 0
    rows = read_rows(tmp_path / "w" / "agg.csv")
    assert rows[0]["date"] == "2005-01-01" and rows[0]["V"] == ""
    assert rows[1]["date"] == "2005-01-02" and float(rows[1]["V"]) == 2.0


def test_monthly_aggregate_key(tmp_path):
    lines = ["date,V", "2005-01-03,1.0", "2005-01-04,3.0", "2005-02-01,5.0"]
    (tmp_path / "t.csv").write_text("\n".join(lines) + "\n")
    proc = invoke("temporal_aggregate", tmp_path / "w", ["../t.csv"],
                  {"granularity": "monthly"}, ["agg.csv"])
    assert proc.returncode == 0
    rows = read_rows(tmp_path / "w" / "agg.csv")
    assert [(r["month"], float(r["V"])) for r in rows] == [("2005-01", 2.0), ("2005-02", 5.0)]


# --- month_split -----------------------------------------------------------------

def test_month_split_partitions_exactly(tmp_path):
    lines = ["date,V"]
    for m, n in (("2005-01", 5), ("2005-02", 3)):
        lines += [f"{m}-{d + 1:02d},{d}" for d in range(n)]
    (tmp_path / "t.csv").write_text("\n".join(lines) + "\n")
    proc = invoke("month_split", tmp_path / "w", ["../t.csv"], {"time_field": "date"}, ["out"])
    assert proc.returncode == 0
    result = json.loads((tmp_path / "w" / "result.json").read_text())
    assert sorted(Path(p).name for p in result["outputs"]) == ["2005-01.csv", "2005-02.csv"]
    n1 = len(read_rows(tmp_path / "w" / "out" / "2005-01.csv"))
    n2 = len(read_rows(tmp_path / "w" / "out" / "2005-02.csv"))
    assert (n1, n2) == (5, 3)


def test_month_split_single_month(tmp_path):
    (tmp_path / "t.csv").write_text("date,V\n2005-07-01,1\n2005-07-02,2\n")
    proc = invoke("month_split", tmp_path / "w", ["../t.csv"], {}, ["out"])
    assert proc.returncode == 0
    result = json.loads((tmp_path / "w" / "result.json").read_text())
    assert [Path(p).name for p in result["outputs"]] == ["2005-07.csv"]


# --- temporal_align + table_join ----------------------------------------------------

def test_align_then_join_row_count_is_date_intersection(tmp_path):
    a = ["date,X"] + [f"2005-01-{d:02d},1.0" for d in range(1, 11)]
    b = ["date,Y"] + [f"2005-01-{d:02d},2.0" for d in range(6, 16)]
    (tmp_path / "a.csv").write_text("\n".join(a) + "\n")
    (tmp_path / "b.csv").write_text("\n".join(b) + "\n")
    proc = invoke("temporal_align", tmp_path / "w1", ["../a.csv", "../b.csv"],
                  {"granularity": "daily"}, ["out"])
    assert proc.returncode == 0
    aligned = json.loads((tmp_path / "w1" / "result.json").read_text())["outputs"]
    proc = invoke("table_join", tmp_path / "w2",
                  [f"../w1/{p}" for p in aligned], {"keys": ["date"]}, ["j.csv"])
    assert proc.returncode == 0
    rows = read_rows(tmp_path / "w2" / "j.csv")
    assert len(rows) == 5  # dates 06..10
    assert set(rows[0]) == {"date", "X", "Y"}


def test_align_collapses_hourly_to_daily_mean(tmp_path):
    lines = ["time,V"] + [f"2005-01-01T{h:02d}:00,{float(h)}" for h in range(4)]
    (tmp_path / "a.csv").write_text("\n".join(lines) + "\n")
    proc = invoke("temporal_align", tmp_path / "w", ["../a.csv"],
                  {"granularity": "daily"}, ["out"])
    assert proc.returncode == 0
    rows = read_rows(tmp_path / "w" / "out" / "aligned_a.csv")
    assert len(rows) == 1
    assert float(rows[0]["V"]) == pytest.approx(1.5, abs=1e-12)


def test_join_empty_intersection_is_success(tmp_path):
    (tmp_path / "a.csv").write_text("date,X\n2005-01-01,1\n")
    (tmp_path / "b.csv").write_text("date,Y\n2006-01-01,2\n")
    proc = invoke("table_join", tmp_path / "w", ["../a.csv", "../b.csv"],
                  {"keys": ["date"]}, ["j.csv"])
    assert proc.returncode == 0
    assert read_rows(tmp_path / "w" / "j.csv") == []


# --- schema_map / csv_clean --------------------------------------------------------

def test_schema_map_identity_is_byte_identical(tmp_path):
    src = "date,V\n2005-01-01,1.5\n2005-01-02,\n"
    (tmp_path / "t.csv").write_text(src)
    proc = invoke("schema_map", tmp_path / "w", ["../t.csv"], {"mapping": {}}, ["m.csv"])
    assert proc.returncode == 0
    assert (tmp_path / "w" / "m.csv").read_text() == src


def test_schema_map_renames(tmp_path):
    (tmp_path / "t.csv").write_text("old,V\nx,1\n")
    proc = invoke("schema_map", tmp_path / "w", ["../t.csv"],
                  {"mapping": {"old": "new"}}, ["m.csv"])
    assert proc.returncode == 0
    assert (tmp_path / "w" / "m.csv").read_text().splitlines()[0] == "new,V"


def test_csv_clean_normalizes(tmp_path):
    (tmp_path / "t.csv").write_text("a,b\n1, NaN \nbadrow\n2,3\n")
    proc = invoke("csv_clean", tmp_path / "w", ["../t.csv"], {}, ["c.csv"])
    assert proc.returncode == 0
    rows = read_rows(tmp_path / "w" / "c.csv")
    assert rows == [{"a": "1", "b": ""}, {"a": "2", "b": "3"}]
    stats = json.loads((tmp_path / "w" / "result.json").read_text())["stats"]
    assert stats["dropped_malformed"] == 1
    assert stats["cells_normalized"] == 1


# --- contract conformance over the whole pack -----------------------------------------

def _valid_task_for(tool: str, tmp_path: Path):
    (tmp_path / "h.csv").write_text("A,B\n")
    (tmp_path / "t.csv").write_text("date,A,B\n2005-01-01,1,2\n2005-01-02,3,4\n")
    (tmp_path / "r.csv").write_text("1,2\n")
    return {
        "header_merge": (["../h.csv", "../r.csv"], {}, ["o.csv"]),
        "temporal_aggregate": (["../t.csv"], {"granularity": "daily"}, ["o.csv"]),
        "month_split": (["../t.csv"], {"time_field": "date"}, ["out"]),
        "temporal_align": (["../t.csv"], {"granularity": "daily"}, ["out"]),
        "schema_map": (["../t.csv"], {"mapping": {}}, ["o.csv"]),
        "table_join": (["../t.csv", "../t.csv"], {"keys": ["date"]}, ["o.csv"]),
        "csv_clean": (["../t.csv"], {}, ["o.csv"]),
    }[tool]


@pytest.mark.parametrize("tool", ALL_TOOLS)
def test_conformance_valid_task(tool, tmp_path):
    inputs, params, outputs = _valid_task_for(tool, tmp_path)
    workdir = tmp_path / "w"
    proc = invoke(tool, workdir, inputs, params, outputs)
    assert proc.returncode == 0, proc.stderr
    result = json.loads((workdir / "result.json").read_text())
    assert result["outputs"], "result.json must list produced files"
    for rel in result["outputs"]:
        assert (workdir / rel).is_file(), f"declared output {rel} missing"


@pytest.mark.parametrize("tool", ALL_TOOLS)
def test_conformance_malformed_task_no_partial_outputs(tool, tmp_path):
    workdir = tmp_path / "w"
    workdir.mkdir()
    (workdir / "task.json").write_text(json.dumps({"inputs": "not-a-list"}))
    proc = subprocess.run(
        [sys.executable, "-m", f"sciforge.tools.{tool}", "task.json"],
        cwd=workdir, capture_output=True, text=True,
    )
    assert proc.returncode == 2
    leftovers = [p for p in workdir.iterdir() if p.name != "task.json"]
    assert leftovers == [], f"partial outputs written: {leftovers}"


@pytest.mark.parametrize("tool", ALL_TOOLS)
def test_determinism_identical_bytes(tool, tmp_path):
    inputs, params, outputs = _valid_task_for(tool, tmp_path)
    blobs = []
    for run in ("w1", "w2"):
        workdir = tmp_path / run
        proc = invoke(tool, workdir, inputs, params, outputs)
        assert proc.returncode == 0
        produced = json.loads((workdir / "result.json").read_text())["outputs"]
        blobs.append({rel: (workdir / rel).read_bytes() for rel in produced})
    assert blobs[0] == blobs[1]


# --- fault injection -----------------------------------------------------------------

def test_fail_times_consumes_counter(tmp_path):
    (tmp_path / "t.csv").write_text("a\n1\n")
    counter = tmp_path / "ctr.txt"
    rcs = []
    for i in range(4):
        proc = invoke(
            "csv_clean", tmp_path / f"w{i}", ["../t.csv"], {}, ["c.csv"],
            extra_args=["--fail-times", "2", "--counter", str(counter)],
        )
        rcs.append(proc.returncode)
        if proc.returncode != 0:
            assert "injected failure" in proc.stderr
    assert rcs == [3, 3, 0, 0]

"""Shared fixtures: deterministic backend, tool-seeded knowledge bases, and
the synthetic Marble-Point-shaped corpus (hourly polar weather rows with a
separated semantic header file)."""

from __future__ import annotations

import calendar
import random
from pathlib import Path

import pytest

from sciforge.backends import DeterministicBackend
from sciforge.knowledge_base import (
    ContractSlot,
    DataUnit,
    DatasetDescription,
    DatasetEntry,
    FieldSpec,
    KnowledgeBase,
    Modality,
    Provenance,
    QualityReport,
    SpatioTemporalIndex,
    ToolDescriptor,
    UnitDescriptor,
)
from sciforge.sandbox import Sandbox
from sciforge.tools import builtin_tool_descriptors

MARBLE_FIELDS = ["YEAR", "MONTH", "DAY", "HOUR", "TEMP_C", "WIND_MS", "PRESSURE_HPA"]
MARBLE_QUERY = (
    "Process polar tabular data: merge header and records, "
    "compute daily averages from hourly values, then split outputs by month"
)


@pytest.fixture
def det_backend():
    return DeterministicBackend()


@pytest.fixture
def sandbox(tmp_path):
    return Sandbox(tmp_path / "sbx")


def make_marble_fixture(
    root: Path,
    months: int = 12,
    year: int = 2005,
    seed: int = 11,
    missing_every: int = 97,
) -> dict:
    """Write header.csv + records.csv and return ground truth for oracles.

    Returns {"rows": int, "daily_means": {date: {field: mean|None}},
    "month_rows": {YYYY-MM: n_days}} computed independently of the engine
    (plain dict arithmetic over the generated values).
    """
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    (root / "header.csv").write_text(",".join(MARBLE_FIELDS) + "\n", encoding="utf-8")

    lines = []
    sums: dict[str, dict[str, float]] = {}
    counts: dict[str, dict[str, int]] = {}
    month_days: dict[str, set] = {}
    n = 0
    cell_no = 0
    for month in range(1, months + 1):
        days = calendar.monthrange(year, month)[1]
        for day in range(1, days + 1):
            date = f"{year:04d}-{month:02d}-{day:02d}"
            month_days.setdefault(f"{year:04d}-{month:02d}", set()).add(day)
            for hour in range(24):
                vals = {
                    "TEMP_C": round(rng.uniform(-45.0, -2.0), 2),
                    "WIND_MS": round(rng.uniform(0.0, 30.0), 2),
                    "PRESSURE_HPA": round(rng.uniform(955.0, 1045.0), 1),
                }
                cells = [str(year), str(month), str(day), str(hour)]
                for f in ("TEMP_C", "WIND_MS", "PRESSURE_HPA"):
                    cell_no += 1
                    if missing_every and (cell_no % missing_every) == 0:
                        cells.append("NaN")
                    else:
                        cells.append(repr(vals[f]))
                        sums.setdefault(date, {}).setdefault(f, 0.0)
                        counts.setdefault(date, {}).setdefault(f, 0)
                        sums[date][f] += vals[f]
                        counts[date][f] += 1
                lines.append(",".join(cells))
                n += 1
    (root / "records.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    daily_means: dict[str, dict[str, float | None]] = {}
    for date in sums:
        daily_means[date] = {}
        for f in ("TEMP_C", "WIND_MS", "PRESSURE_HPA"):
            c = counts.get(date, {}).get(f, 0)
            daily_means[date][f] = (sums[date][f] / c) if c else None
    return {
        "rows": n,
        "daily_means": daily_means,
        "month_rows": {m: len(d) for m, d in month_days.items()},
    }


@pytest.fixture
def kb_with_tools():
    kb = KnowledgeBase()
    for desc in builtin_tool_descriptors():
        kb.register_tool(desc)
    return kb


def simple_unit(
    unit_id: str,
    fields: list[str],
    path: str = "",
    target: str = "",
    row_count: int = 10,
    granularity: str | None = None,
    modality: Modality = Modality.TABULAR,
) -> DataUnit:
    sti = None
    time_fields = [f for f in fields if f.lower() in
                   {"year", "month", "day", "hour", "date", "time", "timestamp"}]
    if time_fields or granularity:
        sti = SpatioTemporalIndex(
            time_field="+".join(time_fields) or None,
            space_fields=[],
            granularity=granularity,
        )
    return DataUnit(
        id=unit_id,
        path=path or f"/data/{unit_id}.csv",
        descriptor=UnitDescriptor(
            modality=modality,
            structural_schema=[FieldSpec(f, "float") for f in fields],
            spatiotemporal_index=sti,
            provenance=Provenance(source_path=path or f"/data/{unit_id}.csv"),
            quality=QualityReport(
                missingness={f: 0.0 for f in fields},
                row_count=row_count,
            ),
        ),
        target_object=target or unit_id,
    )


def dataset_of(units: list[DataUnit], ds_id: str = "ds-test") -> DatasetEntry:
    inventory: dict[str, int] = {}
    for u in units:
        inventory[u.descriptor.modality.value] = inventory.get(u.descriptor.modality.value, 0) + 1
    return DatasetEntry(
        id=ds_id,
        units=units,
        description=DatasetDescription(
            modality_inventory=inventory,
            field_organization={u.id: u.descriptor.field_names() for u in units},
        ),
    )


def tabular_tool(
    tool_id: str,
    tags: list[str],
    capability: str = "",
    command: list[str] | None = None,
    n_inputs: int = 1,
    memory_hint_mb: int | None = 256,
    order_after: list[str] | None = None,
) -> ToolDescriptor:
    return ToolDescriptor(
        id=tool_id,
        capability=capability or tool_id.replace("_", " "),
        capability_tags=tags,
        input_contract=[ContractSlot(Modality.TABULAR) for _ in range(n_inputs)],
        output_contract=[ContractSlot(Modality.TABULAR)],
        dependencies=["python3"],
        timeout_s=30.0,
        memory_hint_mb=memory_hint_mb,
        applicable_modalities=["tabular"],
        command=command or ["true"],
        order_after=order_after or [],
    )


def write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)] + [",".join(str(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# --- hypothesis strategy for randomly generated knowledge bases ---------------

from hypothesis import strategies as st  # noqa: E402

from sciforge.knowledge_base import Case, UnitArchetype, UnitBinding  # noqa: E402

ids_strategy = st.from_regex(r"[a-z][a-z0-9\-]{0,11}", fullmatch=True)
fields_strategy = st.lists(ids_strategy, min_size=1, max_size=4, unique=True)


@st.composite
def knowledge_bases(draw) -> KnowledgeBase:
    kb = KnowledgeBase()
    tool_ids = draw(st.lists(ids_strategy, min_size=1, max_size=4, unique=True))
    for tid in tool_ids:
        kb.register_tool(tabular_tool(tid, ["clean"]))
    n_ds = draw(st.integers(min_value=0, max_value=3))
    for i in range(n_ds):
        units = []
        for j in range(draw(st.integers(min_value=1, max_value=3))):
            units.append(simple_unit(
                f"g{i}u{j}",
                draw(fields_strategy),
                row_count=draw(st.integers(min_value=0, max_value=10_000)),
            ))
        kb.register_dataset(dataset_of(units, ds_id=f"gds{i}"))
    all_units = [u.id for ds in kb.data_lake for u in ds.units]
    n_cases = draw(st.integers(min_value=0, max_value=2))
    for i in range(n_cases):
        binding = UnitBinding(
            strategy=draw(st.text(alphabet="abcdef ", min_size=1, max_size=20)),
            tool_ids=[draw(st.sampled_from(tool_ids))],
            unit_id=draw(st.sampled_from(all_units)) if all_units else None,
            archetype=None if all_units else UnitArchetype(Modality.TABULAR),
        )
        kb.register_case(Case(
            id=f"gcase{i}",
            description=draw(st.text(alphabet="abcdef ", max_size=30)),
            unit_bindings=[binding],
        ))
    return kb

"""Builtin manifest-v1 tools plus their tool-lake descriptors.

These ship with the engine so the whole pipeline runs with no external tool
pack installed; an external pack registers descriptors with the same shape
(see ``sciforge kb add-tools``).
"""

from __future__ import annotations

import sys

from ..knowledge_base import ContractSlot, Modality, ToolDescriptor

_TAB = Modality.TABULAR


def _slot(pattern: list[str] | None = None) -> ContractSlot:
    return ContractSlot(_TAB, pattern or [])


def builtin_tool_descriptors(python: str | None = None) -> list[ToolDescriptor]:
    """Descriptors for the builtin pack, commands bound to this interpreter."""
    py = python or sys.executable

    def cmd(module: str) -> list[str]:
        return [py, "-m", f"sciforge.tools.{module}"]

    return [
        ToolDescriptor(
            id="header_merge",
            capability="merge header and records files into one table with semantic column names",
            capability_tags=["map_schema"],
            input_contract=[_slot(), _slot()],
            output_contract=[_slot()],
            dependencies=["python3"],
            timeout_s=60.0,
            memory_hint_mb=256,
            applicable_modalities=["tabular"],
            command=cmd("header_merge"),
        ),
        ToolDescriptor(
            id="temporal_aggregate",
            capability="compute daily or monthly averages of hourly values grouped by calendar bucket",
            capability_tags=["aggregate"],
            input_contract=[_slot()],
            output_contract=[_slot()],
            dependencies=["python3"],
            timeout_s=120.0,
            memory_hint_mb=512,
            applicable_modalities=["tabular", "timeseries"],
            command=cmd("temporal_aggregate"),
        ),
        ToolDescriptor(
            id="month_split",
            capability="split table outputs by month into one file per calendar month",
            capability_tags=["split"],
            input_contract=[_slot()],
            output_contract=[_slot()],
            dependencies=["python3"],
            timeout_s=60.0,
            memory_hint_mb=256,
            applicable_modalities=["tabular", "timeseries"],
            command=cmd("month_split"),
        ),
        ToolDescriptor(
            id="temporal_align",
            capability="align tables onto one common temporal granularity",
            capability_tags=["align_temporal"],
            input_contract=[_slot()],
            output_contract=[_slot()],
            dependencies=["python3"],
            timeout_s=120.0,
            memory_hint_mb=512,
            applicable_modalities=["tabular", "timeseries"],
            command=cmd("temporal_align"),
        ),
        ToolDescriptor(
            id="schema_map",
            capability="map and rename table columns onto a target schema",
            capability_tags=["map_schema"],
            input_contract=[_slot()],
            output_contract=[_slot()],
            dependencies=["python3"],
            timeout_s=60.0,
            memory_hint_mb=256,
            applicable_modalities=["tabular"],
            command=cmd("schema_map"),
        ),
        ToolDescriptor(
            id="table_join",
            capability="join tables on shared key fields into one table",
            capability_tags=["join"],
            input_contract=[_slot(), _slot()],
            output_contract=[_slot()],
            dependencies=["python3"],
            timeout_s=120.0,
            memory_hint_mb=512,
            applicable_modalities=["tabular"],
            command=cmd("table_join"),
        ),
        ToolDescriptor(
            id="csv_clean",
            capability="clean table cells, unify missing markers, drop malformed rows",
            capability_tags=["clean"],
            input_contract=[_slot()],
            output_contract=[_slot()],
            dependencies=["python3"],
            timeout_s=60.0,
            memory_hint_mb=256,
            applicable_modalities=["tabular"],
            command=cmd("csv_clean"),
        ),
    ]

"""Time-field detection and calendar bucketing shared by the temporal tools."""

from __future__ import annotations

import re

from ._proto import ToolUsageError, is_missing

COMPOSITE_ORDER = ("year", "month", "day", "hour")
_SINGLE_TIME_NAMES = {"date", "time", "timestamp", "datetime"}
_ISO_RE = re.compile(r"^(\d{4})-(\d{2})(?:-(\d{2}))?(?:[ T](\d{2}):(\d{2})(?::(\d{2}))?)?$")

BUCKET_KEY_NAME = {"hourly": "time", "daily": "date", "monthly": "month", "yearly": "year"}


def detect_time_fields(header: list[str]) -> list[str]:
    """Composite year/month/day[/hour] columns, else one ISO-ish named column."""
    lower = {h.lower(): h for h in header}
    composite = [lower[n] for n in COMPOSITE_ORDER if n in lower]
    if any(n in lower for n in ("year",)) and any(n in lower for n in ("month", "day")):
        return composite
    for name in header:
        if name.lower() in _SINGLE_TIME_NAMES:
            return [name]
    return []


def _pad(value: str) -> str:
    v = value.strip()
    if len(v) == 1:
        return "0" + v
    return v


def bucket_of(row: list[str], header: list[str], time_fields: list[str], granularity: str) -> str:
    """Calendar bucket key for one row, e.g. 2005-03-07 for daily."""
    idx = {h: i for i, h in enumerate(header)}
    for f in time_fields:
        if f not in idx:
            raise ToolUsageError(f"time field {f!r} not in table header {header}")
    values = [row[idx[f]].strip() for f in time_fields]
    if any(is_missing(v) for v in values):
        raise ToolUsageError(f"missing time value in row: {row}")

    if len(time_fields) == 1:
        m = _ISO_RE.match(values[0])
        if not m:
            raise ToolUsageError(f"unparseable time value {values[0]!r}")
        year, month, day, hour = m.group(1), m.group(2), m.group(3) or "01", m.group(4) or "00"
    else:
        named = {f.lower(): v for f, v in zip(time_fields, values)}
        year = named.get("year")
        month = _pad(named.get("month", "01"))
        day = _pad(named.get("day", "01"))
        hour = _pad(named.get("hour", "00"))
        if year is None:
            raise ToolUsageError(f"composite time fields {time_fields} lack a year column")

    if granularity == "yearly":
        return year
    if granularity == "monthly":
        return f"{year}-{month}"
    if granularity == "daily":
        return f"{year}-{month}-{day}"
    if granularity == "hourly":
        return f"{year}-{month}-{day}T{hour}:00"
    raise ToolUsageError(f"unknown granularity {granularity!r}")

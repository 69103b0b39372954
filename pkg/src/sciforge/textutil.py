"""Tokenization, lexicons, and the temporal granularity lattice.

Shared by the deterministic backend rules, requirement analysis, plan review,
and integration constraint checks so they all agree on what counts as a token,
a time field, or a granularity.
"""

from __future__ import annotations

import re

STOPWORDS = frozenset(
    """a an and are as at be but by for from if in into is it its of on or
    over per s so such that the their then there these this to under until
    up was were which while will with""".split()
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# granularity label -> rank; lower is finer
GRANULARITY_RANK = {"hourly": 0, "daily": 1, "monthly": 2, "yearly": 3}

# field-name lexicons
TIME_FIELD_LEXICON = {
    "hourly": {"hour", "hr", "hh", "time", "timestamp", "datetime"},
    "daily": {"day", "date", "doy", "dd"},
    "monthly": {"month", "mm", "mon"},
    "yearly": {"year", "yr", "yyyy"},
}

SPACE_FIELD_LEXICON = {
    "lat", "latitude", "lon", "long", "longitude", "elev", "elevation",
    "altitude", "station", "site", "x", "y", "easting", "northing",
}

SPLIT_DIR_LEXICON = {"train", "test", "val", "dev", "validation"}

# clause verbs whose presence means "this clause demands a tool"
ACTION_VERBS = {
    "merge", "aggregate", "average", "averages", "split", "join", "align",
    "map", "clean", "encode", "compute", "resample", "group",
}

_ISO_TS_RE = re.compile(
    r"^\d{4}-\d{2}(-\d{2})?([ T]\d{2}:\d{2}(:\d{2})?)?$"
)


def tokens(text: str) -> list[str]:
    """Lowercased alphanumeric tokens, order preserved, stopwords kept."""
    return _TOKEN_RE.findall(text.lower())


def content_tokens(text: str) -> list[str]:
    """Tokens with stopwords removed."""
    return [t for t in tokens(text) if t not in STOPWORDS]


def token_set(text: str) -> frozenset[str]:
    return frozenset(content_tokens(text))


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


def singularize(word: str) -> str:
    """Crude singular form; enough for object-label matching."""
    if len(word) > 3 and word.endswith("ies"):
        return word[:-3] + "y"
    if len(word) > 3 and word.endswith("ses"):
        return word[:-2]
    if len(word) > 2 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


def field_granularity(field_name: str) -> str | None:
    """Granularity implied by a single field name, or None."""
    t = field_name.strip().lower()
    for gran in ("hourly", "daily", "monthly", "yearly"):
        if t in TIME_FIELD_LEXICON[gran]:
            return gran
    return None


def finest_granularity(grans: list[str]) -> str | None:
    known = [g for g in grans if g in GRANULARITY_RANK]
    if not known:
        return None
    return min(known, key=lambda g: GRANULARITY_RANK[g])


def coarsest_granularity(grans: list[str]) -> str | None:
    known = [g for g in grans if g in GRANULARITY_RANK]
    if not known:
        return None
    return max(known, key=lambda g: GRANULARITY_RANK[g])


def granularity_words(text: str) -> list[str]:
    """Granularity labels mentioned in free text, finest first."""
    toks = set(tokens(text))
    found = []
    for gran, adjectives in (
        ("hourly", {"hourly", "hour", "hours"}),
        ("daily", {"daily", "day", "days"}),
        ("monthly", {"monthly", "month", "months"}),
        ("yearly", {"yearly", "annual", "year", "years"}),
    ):
        if toks & adjectives:
            found.append(gran)
    return found


def looks_like_timestamp(value: str) -> bool:
    return bool(_ISO_TS_RE.match(value.strip()))


def split_clauses(text: str) -> list[str]:
    """Split an instruction into imperative clauses.

    Splits on semicolons, commas, and the word "then"; keeps clause text
    intact otherwise (including "and" — "merge header and records" is one
    clause).
    """
    body = text.split(":", 1)[-1]
    parts = re.split(r"[;,]|\bthen\b", body)
    return [p.strip() for p in parts if p.strip()]

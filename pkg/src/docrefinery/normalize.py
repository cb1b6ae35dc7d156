"""Canonicalization helpers shared by the schema, structurer and metrics layers.

All functions here are pure and idempotent: applying one twice gives the
same result as applying it once. That property is what lets the pipeline
re-normalize records at every boundary without drift.
"""

from __future__ import annotations

import re
from datetime import datetime
from decimal import Decimal, InvalidOperation, ROUND_HALF_UP

# Currency markers stripped from numeric strings before parsing.
_CURRENCY_SYMBOLS = "$€£¥₽₴"
_CURRENCY_CODE_RE = re.compile(r"\b(USD|EUR|GBP|JPY|RUB|UAH|CHF|CNY)\b", re.IGNORECASE)
_THOUSANDS_COMMA_RE = re.compile(r"(?<=\d),(?=\d{3}(?:\D|$))")
_NUMBER_RE = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)")

_BLANK_LINE_RE = re.compile(r"\n\s*\n")
_HSPACE_RE = re.compile(r"[ \t\f\v]+")

_QUANTUM = Decimal("0.0001")


def normalize_whitespace(text: str) -> str:
    """Collapse horizontal whitespace runs, trim lines, squeeze blank-line runs.

    Line breaks are preserved (log lines stay separate); runs of blank lines
    collapse to a single blank line so paragraph breaks survive.
    """
    lines = [_HSPACE_RE.sub(" ", line).strip() for line in text.split("\n")]
    out: list[str] = []
    blank_pending = False
    for line in lines:
        if line:
            if blank_pending and out:
                out.append("")
            out.append(line)
            blank_pending = False
        else:
            blank_pending = True
    return "\n".join(out)


def parse_number(value: object) -> Decimal | None:
    """Parse a numeric field value, tolerating thousands separators and currency.

    Returns None when the value is not numeric. Booleans are rejected:
    JSON true/false in a number field is a type error, not a number.
    """
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return Decimal(value)
    if isinstance(value, float):
        return Decimal(repr(value))
    if isinstance(value, Decimal):
        return value
    if not isinstance(value, str):
        return None
    text = _CURRENCY_CODE_RE.sub("", value)
    text = text.translate({ord(c): None for c in _CURRENCY_SYMBOLS})
    text = text.strip().replace(" ", "").replace("_", "")
    text = _THOUSANDS_COMMA_RE.sub("", text)
    if not text or not _NUMBER_RE.fullmatch(text):
        return None
    try:
        return Decimal(text)
    except InvalidOperation:
        return None


def canonical_number(value: Decimal) -> str:
    """Render a number in its canonical form: fixed four fractional digits."""
    return str(value.quantize(_QUANTUM, rounding=ROUND_HALF_UP))


DEFAULT_TIMESTAMP_LAYOUT = "iso-8601"


def parse_iso_timestamp(value: str) -> datetime | None:
    text = value.strip()
    # datetime.fromisoformat on 3.10 rejects a trailing Z designator.
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        return None


def matches_timestamp_layout(value: str, layout: str | None = None) -> bool:
    """True when the string already conforms to the given timestamp layout."""
    if not isinstance(value, str) or not value.strip():
        return False
    if layout is None or layout == DEFAULT_TIMESTAMP_LAYOUT:
        return parse_iso_timestamp(value) is not None
    try:
        datetime.strptime(value.strip(), layout)
        return True
    except ValueError:
        return False


# Fallback layouts tried when a timestamp does not match its declared layout.
_COMMON_TIMESTAMP_LAYOUTS = (
    "%Y-%m-%d %H:%M:%S",
    "%Y/%m/%d %H:%M:%S",
    "%d.%m.%Y %H:%M:%S",
    "%m/%d/%Y %H:%M",
    "%Y-%m-%d",
    "%d %b %Y %H:%M",
)


def normalize_timestamp(value: str, layout: str | None = None) -> str:
    """Re-render a timestamp into the field's layout when possible.

    Values already conforming to the layout pass through unchanged, which
    keeps the operation idempotent. Unparseable values are returned verbatim
    for the rule check to flag.
    """
    if not isinstance(value, str):
        return value
    if matches_timestamp_layout(value, layout):
        return value
    parsed = parse_iso_timestamp(value)
    if parsed is None:
        for candidate in _COMMON_TIMESTAMP_LAYOUTS:
            try:
                parsed = datetime.strptime(value.strip(), candidate)
                break
            except ValueError:
                continue
    if parsed is None:
        return value
    if layout is None or layout == DEFAULT_TIMESTAMP_LAYOUT:
        return parsed.isoformat()
    return parsed.strftime(layout)

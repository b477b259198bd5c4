"""Duration parsing with unit suffixes (s, min, h, d)."""

import re

from .errors import InputError

SECONDS = {"s": 1.0, "min": 60.0, "h": 3600.0, "d": 86400.0}

_TOKEN = re.compile(r"\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(min|s|h|d)?")


def parse_duration(text, default_unit="s"):
    """Parse ``"240h"``, ``"2h42min"``, ``"375"`` ... into seconds.

    Bare numbers are read in ``default_unit``. Compound forms are summed.
    """
    if isinstance(text, (int, float)):
        return float(text) * SECONDS[default_unit]
    s = str(text).strip()
    if not s:
        raise InputError("empty duration")
    pos = 0
    total = 0.0
    while pos < len(s):
        m = _TOKEN.match(s, pos)
        if not m or m.end() == pos:
            raise InputError(f"cannot parse duration {text!r}")
        unit = m.group(2) or default_unit
        total += float(m.group(1)) * SECONDS[unit]
        pos = m.end()
        if m.group(2) is None and pos < len(s):
            raise InputError(f"cannot parse duration {text!r}")
    return total


def to_unit(seconds, unit):
    return seconds / SECONDS[unit]


def format_hms(seconds):
    """``9720.0`` -> ``"2h42min0s"`` (rounded to the second)."""
    s = int(round(seconds))
    h, rem = divmod(s, 3600)
    m, sec = divmod(rem, 60)
    if h:
        return f"{h}h{m:02d}min{sec:02d}s"
    if m:
        return f"{m}min{sec:02d}s"
    return f"{sec}s"

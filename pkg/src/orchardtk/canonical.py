"""Canonical JSON formatting.

Every file this package writes must be byte-identical for identical data,
so golden-file and reproducibility tests can compare raw bytes. Numbers
are rounded to a fixed number of fractional digits and integral floats
collapse to integers; dict key order is whatever the caller built (schema
order for manifests, sorted for everything else).
"""

from __future__ import annotations

import json
from typing import Any


def canon_numbers(obj: Any, places: int) -> Any:
    """Recursively round floats to ``places`` digits, ints where exact."""
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, float):
        if obj != obj or obj in (float("inf"), float("-inf")):
            raise ValueError(f"non-finite number {obj!r} is not serializable")
        rounded = round(obj, places)
        if rounded == int(rounded) and abs(rounded) < 2**53:
            return int(rounded)
        return rounded
    if isinstance(obj, dict):
        return {k: canon_numbers(v, places) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canon_numbers(v, places) for v in obj]
    return obj


def sorted_tree(obj: Any) -> Any:
    """Recursively sort dict keys; used for free-form metadata blocks."""
    if isinstance(obj, dict):
        return {k: sorted_tree(obj[k]) for k in sorted(obj)}
    if isinstance(obj, (list, tuple)):
        return [sorted_tree(v) for v in obj]
    return obj


def dumps(obj: Any, *, places: int = 6, sort_keys: bool = False) -> bytes:
    """Serialize to canonical UTF-8 JSON bytes with a trailing newline."""
    text = json.dumps(
        canon_numbers(obj, places),
        indent=2,
        sort_keys=sort_keys,
        ensure_ascii=True,
        allow_nan=False,
    )
    return (text + "\n").encode("utf-8")

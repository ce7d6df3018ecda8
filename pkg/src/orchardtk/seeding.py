"""Deterministic seed derivation for schedule-independent randomness.

Python's built-in hash() is salted per process, so it cannot key random
streams that must agree across runs, threads, or worker processes. All
per-item seeds in this package are derived here instead.
"""

from __future__ import annotations

import hashlib

DEFAULT_SEED = 42

_MASK64 = (1 << 64) - 1


def derive_seed(*parts: object) -> int:
    """Derive a 64-bit seed from a base seed plus arbitrary key parts.

    Floats are keyed by their exact hex form, everything else by str().
    The result depends only on the values, never on call order elsewhere,
    so parallel work over items draws the same numbers as a serial run.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, float):
            token = part.hex()
        else:
            token = str(part)
        h.update(token.encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big") & _MASK64

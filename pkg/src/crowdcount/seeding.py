"""Deterministic per-stage seed derivation from one master seed.

Stage seeds are sha256 digests of the master seed plus string/int labels,
so every stage is independently reproducible and insensitive to call order
or Python hash randomization.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, *labels) -> int:
    """Derive a 64-bit seed from the master seed and a label path."""
    key = repr((int(master),) + tuple(labels)).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little")

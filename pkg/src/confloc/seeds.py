"""Deterministic seed derivation.

Every pipeline stage draws its randomness from a seed derived from the single
root seed and a stage label, so any stage can be re-run in isolation and still
see the same random stream. The splitting rule is fixed: the stage seed is the
first 8 bytes (big-endian) of SHA-256 of ``"{root}:{label}"``.
"""

from __future__ import annotations

import hashlib


def derive_seed(root: int, label: str) -> int:
    """Derive a 64-bit stage seed from the root seed and a stage label."""
    digest = hashlib.sha256(f"{root}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")

"""Deterministic seed derivation.

All randomness in the package flows from a single 64-bit master seed through
these helpers, so runs are reproducible bit for bit and independent of
Python's salted hash().
"""

from __future__ import annotations

import hashlib

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 step; a cheap, well-mixed 64-bit hash of an integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return (x ^ (x >> 31)) & _MASK


def sample_seed(seed: int, index: int) -> int:
    """Per-sample seed: seed XOR a hash of the sample index.

    Parallel generation with per-sample seeds therefore equals sequential
    generation.
    """
    return (seed ^ splitmix64(index)) & _MASK


def derive(seed: int, *tags: str) -> int:
    """Derive a stream seed from a parent seed and a stable string path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(seed.to_bytes(8, "little", signed=False))
    for tag in tags:
        h.update(b"\x00")
        h.update(tag.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")

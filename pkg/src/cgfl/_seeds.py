"""Deterministic seed derivation, independent of PYTHONHASHSEED and thread count."""

from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(*parts: int) -> int:
    """Fold integer parts into one well-mixed 64-bit seed."""
    acc = _GOLDEN
    for part in parts:
        acc = _splitmix64(acc ^ (part & _MASK64))
    return acc


def string_seed(text: str) -> int:
    """Stable 64-bit digest of a string (unlike builtin hash())."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")

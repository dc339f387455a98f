"""Portable 64-bit hashing and counter-based random streams.

Everything here is defined bit-exactly so index schedules and checksums can
be reproduced by any implementation:

* FNV-1a 64 over raw bytes (offset basis 0xcbf29ce484222325, prime 0x100000001b3).
* splitmix64: ``state += 0x9E3779B97F4A7C15`` then the standard 30/27/31 mixer.
  The i-th output of a stream seeded with ``s`` is ``mix(s + (i + 1) * GAMMA)``.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_key(seed: int, label: str) -> int:
    """Stream key for ``label`` under a global seed."""
    return mix64((seed & MASK64) ^ fnv1a64(label.encode("utf-8")))


def splitmix64_stream(key: int, n: int) -> np.ndarray:
    """First ``n`` splitmix64 outputs for a stream keyed by ``key`` (uint64 array)."""
    with np.errstate(over="ignore"):
        counter = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(key & MASK64) + counter * np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def random_permutation(key: int, n: int) -> np.ndarray:
    """Permutation of ``range(n)`` ordered by per-index splitmix64 keys.

    Ties (practically impossible) fall back to index order through the stable sort.
    """
    return np.argsort(splitmix64_stream(key, n), kind="stable").astype(np.int64)

"""Seed derivation and RNG streams.

Every random draw in the workbench comes from a ``numpy.random.Generator``
built on PCG64 whose seed is derived with :func:`split`.  PCG64 output is
specified bit-for-bit by numpy, so a (seed, path) pair names the same stream
on every platform.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 finalizer."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _component(part: int | str) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.blake2b(part.encode(), digest_size=8).digest(), "big")
    return int(part) & MASK64


def split(seed: int, *path: int | str) -> int:
    """Derive a child seed from ``seed`` along ``path``.

    >>> split(7, 0, 1) == split(7, 0, 1)
    True
    >>> split(7, 0, 1) != split(7, 1, 0)
    True
    """
    x = splitmix64(int(seed) & MASK64)
    for part in path:
        x = splitmix64(x ^ _component(part))
    return x


def make_rng(seed: int, *path: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(split(seed, *path) if path else int(seed) & MASK64))

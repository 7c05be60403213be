"""Privacy amplification with a seeded Toeplitz hash."""

from __future__ import annotations

import math

import numpy as np

# FFT products are exact after rounding while every partial sum stays far
# below 2**52; below this size the direct convolution is faster anyway.
_DIRECT_LIMIT = 1 << 22


def binary_entropy(q: float) -> float:
    if q <= 0.0 or q >= 1.0:
        return 0.0
    return -q * math.log2(q) - (1.0 - q) * math.log2(1.0 - q)


def final_key_length(n: int, qber: float, leaked_bits: int, pa_safety_bits: int) -> int:
    """``floor(n * (1 - h2(qber)) - leaked - safety)``, may be <= 0."""
    return math.floor(n * (1.0 - binary_entropy(qber)) - leaked_bits - pa_safety_bits)


def _conv_mod2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(a) * len(b) <= _DIRECT_LIMIT:
        return (np.convolve(a.astype(np.int64), b.astype(np.int64)) & 1).astype(np.uint8)
    size = len(a) + len(b) - 1
    nfft = 1 << (size - 1).bit_length()
    prod = np.fft.irfft(np.fft.rfft(a.astype(float), nfft) * np.fft.rfft(b.astype(float), nfft), nfft)[:size]
    return (np.rint(prod).astype(np.int64) & 1).astype(np.uint8)


def toeplitz_hash(key, seed_bits, m: int) -> np.ndarray:
    """Multiply ``key`` (length n) by the m x n Toeplitz matrix over GF(2).

    ``seed_bits`` has length ``n + m - 1`` and fixes every diagonal:
    ``T[i, j] = seed_bits[i - j + n - 1]``.
    """
    k = np.asarray(key, dtype=np.uint8)
    s = np.asarray(seed_bits, dtype=np.uint8)
    n = len(k)
    if m <= 0 or n == 0:
        return np.zeros(0, dtype=np.uint8)
    if len(s) != n + m - 1:
        raise ValueError(f"need {n + m - 1} seed bits, got {len(s)}")
    return _conv_mod2(s, k)[n - 1:n - 1 + m]


def toeplitz_matrix(seed_bits, n: int, m: int) -> np.ndarray:
    s = np.asarray(seed_bits, dtype=np.uint8)
    i = np.arange(m)[:, None]
    j = np.arange(n)[None, :]
    return s[i - j + n - 1]


def privacy_amplify(
    shared_key,
    leaked_bits: int,
    qber: float,
    pa_safety_bits: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Compress the reconciled key; an empty result means nothing is left."""
    key = np.asarray(shared_key, dtype=np.uint8)
    if len(key) == 0:
        raise ValueError("shared_key must be non-empty")
    m = final_key_length(len(key), qber, leaked_bits, pa_safety_bits)
    if m <= 0:
        return np.zeros(0, dtype=np.uint8)
    seed_bits = rng.integers(0, 2, len(key) + m - 1, dtype=np.uint8)
    return toeplitz_hash(key, seed_bits, m)

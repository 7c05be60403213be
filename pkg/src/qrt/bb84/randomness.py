"""Frequency (monobit) and runs tests on a key."""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from ..qubit_core import InvalidParameter

Z_CRITICAL_001 = 2.5758293035489004  # two-sided, alpha = 0.01
MIN_KEY_BITS = 100


@dataclass(frozen=True)
class RandomnessVerdict:
    monobit_z: float
    runs_z: float
    passed: bool
    alpha: float = 0.01


def monobit_z(bits: np.ndarray) -> float:
    n = len(bits)
    s = 2 * int(np.count_nonzero(bits)) - n
    return abs(s) / math.sqrt(n)


def runs_z(bits: np.ndarray) -> float:
    """Wald-Wolfowitz runs statistic; infinite for a constant sequence."""
    n = len(bits)
    ones = int(np.count_nonzero(bits))
    zeros = n - ones
    runs = 1 + int(np.count_nonzero(np.diff(bits)))
    mean = 2.0 * ones * zeros / n + 1.0
    var = (mean - 1.0) * (mean - 2.0) / (n - 1)
    if var <= 0:
        return math.inf
    return (runs - mean) / math.sqrt(var)


def test_key_randomness(key, alpha: float = 0.01) -> RandomnessVerdict:
    bits = np.asarray(key, dtype=np.int8)
    if len(bits) < MIN_KEY_BITS:
        raise InvalidParameter(f"key must have at least {MIN_KEY_BITS} bits")
    if alpha != 0.01:
        critical = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    else:
        critical = Z_CRITICAL_001
    z1 = monobit_z(bits)
    z2 = runs_z(bits)
    return RandomnessVerdict(z1, z2, bool(abs(z1) < critical and abs(z2) < critical), alpha)


test_key_randomness.__test__ = False  # not a pytest test

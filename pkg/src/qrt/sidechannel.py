"""Synthetic leakage traces and a differential recovery attack.

Leakage is linear in the secret bit: every sample in bit ``i``'s window is
``leak_weight * bit_i`` plus independent Gaussian noise.  Averaging a window
over many traces shrinks the noise by ``sqrt(N * samples_per_bit)``, after
which a 1-D two-means split separates the zero bits from the one bits.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .rng import make_rng


class InvalidTraces(ValueError):
    pass


@dataclass(frozen=True)
class LeakModel:
    leak_weight: float = 1.0
    noise_sigma: float = 1.0
    samples_per_bit: int = 4

    def __post_init__(self) -> None:
        if not math.isfinite(self.leak_weight):
            raise ValueError("leak_weight must be finite")
        if not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise ValueError("noise_sigma must be finite and >= 0")
        if self.samples_per_bit < 1:
            raise ValueError("samples_per_bit must be positive")

    @property
    def snr(self) -> float:
        if self.noise_sigma == 0:
            return math.inf if self.leak_weight else 0.0
        return self.leak_weight**2 / self.noise_sigma**2

    @classmethod
    def from_snr(cls, snr: float, noise_sigma: float = 1.0, samples_per_bit: int = 4) -> LeakModel:
        return cls(math.sqrt(snr) * noise_sigma, noise_sigma, samples_per_bit)

    def mitigated(self) -> LeakModel:
        return LeakModel(0.0, self.noise_sigma, self.samples_per_bit)


@dataclass(frozen=True)
class Trace:
    samples: np.ndarray
    trace_id: int
    seed: int


def emit_trace(secret_key, model: LeakModel, rng: np.random.Generator, trace_id: int = 0, seed: int = 0) -> Trace:
    key = np.asarray(secret_key, dtype=np.float64)
    if key.size == 0:
        raise InvalidTraces("secret key must be non-empty")
    signal = np.repeat(model.leak_weight * key, model.samples_per_bit)
    noise = rng.normal(0.0, model.noise_sigma, signal.size) if model.noise_sigma > 0 else 0.0
    return Trace(signal + noise, trace_id, seed)


def emit_traces(secret_key, model: LeakModel, n_traces: int, seed: int) -> list[Trace]:
    """``n_traces`` traces, trace ``t`` drawn from its own stream ``(seed, t)``."""
    return [emit_trace(secret_key, model, make_rng(seed, "trace", t), t, seed) for t in range(n_traces)]


def _two_means_threshold(values: np.ndarray, max_iter: int = 100) -> float:
    lo, hi = float(values.min()), float(values.max())
    threshold = 0.5 * (lo + hi)
    for _ in range(max_iter):
        upper = values >= threshold
        if upper.all() or not upper.any():
            break
        new = 0.5 * (values[upper].mean() + values[~upper].mean())
        if new == threshold:
            break
        threshold = float(new)
    return threshold


def window_means(traces: list[Trace], samples_per_bit: int) -> np.ndarray:
    if len(traces) < 1:
        raise InvalidTraces("no traces")
    lengths = {t.samples.size for t in traces}
    if len(lengths) != 1:
        raise InvalidTraces(f"inconsistent trace lengths {sorted(lengths)}")
    length = lengths.pop()
    if samples_per_bit < 1 or length % samples_per_bit:
        raise InvalidTraces(f"trace length {length} is not a multiple of {samples_per_bit}")
    stacked = np.stack([t.samples for t in traces])
    return stacked.mean(axis=0).reshape(-1, samples_per_bit).mean(axis=1)


def dpa_recover(traces: list[Trace], samples_per_bit: int) -> tuple[np.ndarray, np.ndarray]:
    """Recover key bits and a confidence in [0, 1] per bit.

    Confidence is the bit's distance from the threshold divided by the
    largest such distance.
    """
    means = window_means(traces, samples_per_bit)
    threshold = _two_means_threshold(means)
    bits = (means >= threshold).astype(np.uint8)
    dist = np.abs(means - threshold)
    top = dist.max()
    confidence = dist / top if top > 0 else np.zeros_like(dist)
    return bits, confidence


def recovery_accuracy(secret_key, recovered) -> float:
    key = np.asarray(secret_key)
    return float(np.mean(key == np.asarray(recovered)))


def run_attack(secret_key, model: LeakModel, n_traces: int, seed: int) -> float:
    traces = emit_traces(secret_key, model, n_traces, seed)
    bits, _ = dpa_recover(traces, model.samples_per_bit)
    return recovery_accuracy(secret_key, bits)


def traces_csv(traces: list[Trace]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["trace_id", "sample_index", "value"])
    for t in traces:
        for i, v in enumerate(t.samples.tolist()):
            writer.writerow([t.trace_id, i, repr(v)])
    return buf.getvalue()

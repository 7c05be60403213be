"""Physical layer of a prepare-and-measure BB84 link.

Qubits are simulated with the classical BB84 measurement rule: a matched
basis reproduces the encoded bit, a conjugate basis yields a uniform bit.
That is exact for prepare-and-measure statistics, which is all the attack
models here need.  The source is a weak coherent pulse, so the photon number
of every pulse is Poisson distributed and multi-photon pulses exist.

Two layers are provided.  The batch functions (``*_batch``) work on columnar
numpy arrays and are what sessions use; the scalar functions operate on one
:class:`PhotonPulse` and are thin wrappers around the batch path, so both
share a single implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np


class Basis(IntEnum):
    RECTILINEAR = 0
    DIAGONAL = 1


class IntensityClass(IntEnum):
    SIGNAL = 0
    DECOY = 1
    VACUUM = 2


class InvalidParameter(ValueError):
    """A physical parameter is outside its allowed range."""


@dataclass(frozen=True)
class PhotonPulse:
    round_id: int
    bit: int
    basis: Basis
    photon_count: int
    intensity_class: IntensityClass = IntensityClass.SIGNAL


@dataclass(frozen=True)
class ChannelParams:
    transmittance: float = 1.0
    depolarize_prob: float = 0.0
    dark_count_prob: float = 0.0
    detector_efficiency: float = 1.0
    timing_jitter: float = 0.0  # ns, telemetry only

    def __post_init__(self) -> None:
        checks = [
            (0.0 < self.transmittance <= 1.0, "transmittance must be in (0, 1]"),
            (0.0 <= self.depolarize_prob <= 0.5, "depolarize_prob must be in [0, 0.5]"),
            (0.0 <= self.dark_count_prob < 1.0, "dark_count_prob must be in [0, 1)"),
            (0.0 < self.detector_efficiency <= 1.0, "detector_efficiency must be in (0, 1]"),
            (self.timing_jitter >= 0.0 and math.isfinite(self.timing_jitter), "timing_jitter must be >= 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise InvalidParameter(message)

    @classmethod
    def ideal(cls) -> ChannelParams:
        return cls()


@dataclass(frozen=True)
class DetectionOutcome:
    """Bob's detector result for one round: ``NoClick`` or ``Click(bit, basis)``."""

    clicked: bool
    bit: int | None = None
    measured_basis: Basis | None = None

    def __post_init__(self) -> None:
        if self.clicked != (self.bit is not None) or self.clicked != (self.measured_basis is not None):
            raise InvalidParameter("Click carries exactly one bit and one basis; NoClick carries neither")

    @classmethod
    def click(cls, bit: int, basis: Basis) -> DetectionOutcome:
        return cls(True, int(bit), Basis(basis))


NO_CLICK = DetectionOutcome(False)


@dataclass
class PulseBatch:
    """Columnar storage for many pulses; index ``i`` is round ``round_id[i]``."""

    round_id: np.ndarray
    bit: np.ndarray
    basis: np.ndarray
    photon_count: np.ndarray
    intensity_class: np.ndarray

    def __len__(self) -> int:
        return len(self.round_id)

    def copy(self) -> PulseBatch:
        return PulseBatch(
            self.round_id.copy(),
            self.bit.copy(),
            self.basis.copy(),
            self.photon_count.copy(),
            self.intensity_class.copy(),
        )

    def pulse(self, i: int) -> PhotonPulse:
        return PhotonPulse(
            int(self.round_id[i]),
            int(self.bit[i]),
            Basis(int(self.basis[i])),
            int(self.photon_count[i]),
            IntensityClass(int(self.intensity_class[i])),
        )

    @classmethod
    def from_pulses(cls, pulses: list[PhotonPulse]) -> PulseBatch:
        return cls(
            np.array([p.round_id for p in pulses], dtype=np.int64),
            np.array([p.bit for p in pulses], dtype=np.int8),
            np.array([int(p.basis) for p in pulses], dtype=np.int8),
            np.array([p.photon_count for p in pulses], dtype=np.int64),
            np.array([int(p.intensity_class) for p in pulses], dtype=np.int8),
        )


@dataclass
class OutcomeBatch:
    """Bob's detections: ``bit`` is meaningful only where ``clicked``."""

    clicked: np.ndarray
    bit: np.ndarray
    measured_basis: np.ndarray

    def outcome(self, i: int) -> DetectionOutcome:
        if not self.clicked[i]:
            return NO_CLICK
        return DetectionOutcome.click(int(self.bit[i]), Basis(int(self.measured_basis[i])))


def prepare_batch(
    bits: np.ndarray,
    bases: np.ndarray,
    mean_photon_numbers: np.ndarray,
    intensity_classes: np.ndarray,
    rng: np.random.Generator,
    first_round: int = 0,
) -> PulseBatch:
    means = np.asarray(mean_photon_numbers, dtype=float)
    if not np.all(np.isfinite(means)) or np.any(means < 0):
        raise InvalidParameter("mean photon number must be finite and non-negative")
    n = len(bits)
    counts = rng.poisson(np.broadcast_to(means, (n,)))
    return PulseBatch(
        np.arange(first_round, first_round + n, dtype=np.int64),
        np.asarray(bits, dtype=np.int8).copy(),
        np.asarray(bases, dtype=np.int8).copy(),
        counts.astype(np.int64),
        np.broadcast_to(np.asarray(intensity_classes, dtype=np.int8), (n,)).copy(),
    )


def transmit_batch(
    batch: PulseBatch,
    channel: ChannelParams,
    rng: np.random.Generator,
    transmittance: float | np.ndarray | None = None,
) -> PulseBatch:
    """Independent per-photon loss, then a bit flip on surviving pulses.

    ``transmittance`` overrides the channel value per round; an adversary who
    replaces the fibre with a lossless link passes 1.0 for the rounds she owns.
    """
    t = channel.transmittance if transmittance is None else transmittance
    n = len(batch)
    survivors = rng.binomial(batch.photon_count, t)
    flips = rng.random(n) < channel.depolarize_prob
    out = batch.copy()
    out.photon_count = survivors.astype(np.int64)
    out.bit = np.where(flips & (survivors > 0), 1 - batch.bit, batch.bit).astype(np.int8)
    return out


def measure_batch(
    arrival: PulseBatch,
    bob_bases: np.ndarray,
    channel: ChannelParams,
    rng: np.random.Generator,
) -> OutcomeBatch:
    n = len(arrival)
    fire_draw = rng.random(n)
    dark_draw = rng.random(n)
    random_bits = rng.integers(0, 2, n, dtype=np.int8)

    occupied = arrival.photon_count > 0
    fired = occupied & (fire_draw < channel.detector_efficiency)
    dark = ~occupied & (dark_draw < channel.dark_count_prob)
    matched = arrival.basis == bob_bases
    bit = np.where(fired & matched, arrival.bit, random_bits).astype(np.int8)
    clicked = fired | dark
    return OutcomeBatch(clicked, np.where(clicked, bit, 0).astype(np.int8), np.asarray(bob_bases, dtype=np.int8).copy())


def prepare_pulse(
    bit: int,
    basis: Basis,
    mean_photon_number: float,
    intensity_class: IntensityClass,
    rng: np.random.Generator,
    round_id: int = 0,
) -> PhotonPulse:
    if bit not in (0, 1):
        raise InvalidParameter("bit must be 0 or 1")
    batch = prepare_batch(
        np.array([bit]), np.array([int(basis)]), np.array([mean_photon_number]),
        np.array([int(intensity_class)]), rng, first_round=round_id,
    )
    return batch.pulse(0)


def transmit(pulse: PhotonPulse, channel: ChannelParams, rng: np.random.Generator) -> PhotonPulse:
    return transmit_batch(PulseBatch.from_pulses([pulse]), channel, rng).pulse(0)


def measure(arrival: PhotonPulse, bob_basis: Basis, channel: ChannelParams, rng: np.random.Generator) -> DetectionOutcome:
    out = measure_batch(PulseBatch.from_pulses([arrival]), np.array([int(bob_basis)], dtype=np.int8), channel, rng)
    return out.outcome(0)


def with_photons(pulse: PhotonPulse, photon_count: int) -> PhotonPulse:
    return replace(pulse, photon_count=photon_count)

"""Eavesdropper strategies.

Eve sits between Alice's source and the fibre.  Her detectors and her
re-preparation are ideal (unit efficiency, exactly one photon out), which is
the worst case for Alice and Bob.

The adaptive strategy is an epsilon-greedy bandit over concrete attack arms;
it chooses one arm per session and learns from the session outcome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Union

import numpy as np

from .qubit_core import (
    Basis,
    ChannelParams,
    DetectionOutcome,
    InvalidParameter,
    OutcomeBatch,
    PhotonPulse,
    PulseBatch,
)


class BasisPolicy(str, Enum):
    RANDOM = "random"
    FIXED_RECTILINEAR = "fixed_rectilinear"


class Fault(str, Enum):
    DETECTOR_BLIND = "detector_blind"
    BASIS_FLIP = "basis_flip"


def _check_prob(value: float, name: str) -> None:
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise InvalidParameter(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class NoAdversary:
    kind = "none"


@dataclass(frozen=True)
class InterceptResend:
    fraction: float = 1.0
    basis_policy: BasisPolicy = BasisPolicy.RANDOM
    kind = "intercept_resend"

    def __post_init__(self) -> None:
        _check_prob(self.fraction, "fraction")
        object.__setattr__(self, "basis_policy", BasisPolicy(self.basis_policy))


@dataclass(frozen=True)
class PhotonNumberSplit:
    block_prob: float = 0.0
    kind = "pns"

    def __post_init__(self) -> None:
        _check_prob(self.block_prob, "block_prob")


@dataclass(frozen=True)
class FaultInject:
    fault: Fault = Fault.DETECTOR_BLIND
    rate: float = 0.0
    kind = "fault_inject"

    def __post_init__(self) -> None:
        _check_prob(self.rate, "rate")
        object.__setattr__(self, "fault", Fault(self.fault))


@dataclass(frozen=True)
class Adaptive:
    arms: tuple = ()
    epsilon: float = 0.1
    reward_weights: tuple[float, float] = (1.0, 1.0)
    kind = "adaptive"

    def __post_init__(self) -> None:
        object.__setattr__(self, "arms", tuple(self.arms))
        object.__setattr__(self, "reward_weights", tuple(float(w) for w in self.reward_weights))
        if not self.arms:
            raise InvalidParameter("Adaptive needs at least one arm")
        if any(isinstance(a, Adaptive) for a in self.arms):
            raise InvalidParameter("Adaptive arms cannot nest another Adaptive strategy")
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidParameter("epsilon must be in (0, 1)")
        if len(self.reward_weights) != 2:
            raise InvalidParameter("reward_weights is (info_gain_w, detection_penalty_w)")


ConcreteStrategy = Union[NoAdversary, InterceptResend, PhotonNumberSplit, FaultInject]
AdversaryStrategy = Union[ConcreteStrategy, Adaptive]


def strategy_to_dict(strategy: AdversaryStrategy | None) -> dict[str, Any]:
    if strategy is None or isinstance(strategy, NoAdversary):
        return {"kind": "none"}
    if isinstance(strategy, InterceptResend):
        return {"kind": strategy.kind, "fraction": strategy.fraction, "basis_policy": strategy.basis_policy.value}
    if isinstance(strategy, PhotonNumberSplit):
        return {"kind": strategy.kind, "block_prob": strategy.block_prob}
    if isinstance(strategy, FaultInject):
        return {"kind": strategy.kind, "fault": strategy.fault.value, "rate": strategy.rate}
    return {
        "kind": strategy.kind,
        "arms": [strategy_to_dict(a) for a in strategy.arms],
        "epsilon": strategy.epsilon,
        "reward_weights": list(strategy.reward_weights),
    }


_FIELDS = {
    "none": set(),
    "intercept_resend": {"fraction", "basis_policy"},
    "pns": {"block_prob"},
    "fault_inject": {"fault", "rate"},
    "adaptive": {"arms", "epsilon", "reward_weights"},
}


def strategy_from_dict(data: dict[str, Any]) -> AdversaryStrategy:
    kind = data.get("kind")
    if kind not in _FIELDS:
        raise InvalidParameter(f"unknown adversary kind {kind!r}")
    extra = set(data) - _FIELDS[kind] - {"kind"}
    if extra:
        raise InvalidParameter(f"unknown keys for adversary {kind}: {sorted(extra)}")
    params = {k: v for k, v in data.items() if k != "kind"}
    if kind == "none":
        return NoAdversary()
    if kind == "intercept_resend":
        return InterceptResend(**params)
    if kind == "pns":
        return PhotonNumberSplit(**params)
    if kind == "fault_inject":
        return FaultInject(**params)
    arms = tuple(strategy_from_dict(a) for a in params.pop("arms", []))
    return Adaptive(arms=arms, **params)


@dataclass
class EveRecord:
    """Per-round ground truth of what Eve did.  ``-1`` encodes Absent."""

    touched: np.ndarray
    eve_basis: np.ndarray
    eve_bit: np.ndarray
    photons_stolen: np.ndarray

    @classmethod
    def empty(cls, n: int) -> EveRecord:
        return cls(
            np.zeros(n, dtype=bool),
            np.full(n, -1, dtype=np.int8),
            np.full(n, -1, dtype=np.int8),
            np.zeros(n, dtype=np.int64),
        )

    def entry(self, i: int) -> dict[str, Any]:
        return {
            "touched": bool(self.touched[i]),
            "eve_basis": None if self.eve_basis[i] < 0 else Basis(int(self.eve_basis[i])),
            "eve_bit": None if self.eve_bit[i] < 0 else int(self.eve_bit[i]),
            "photons_stolen": int(self.photons_stolen[i]),
        }

    def known_bits(self, alice_bits: np.ndarray) -> np.ndarray:
        """Mask of rounds where Eve holds the correct value of Alice's bit."""
        return self.touched & (self.eve_bit >= 0) & (self.eve_bit == alice_bits)


def intercept_resend_batch(
    batch: PulseBatch,
    fraction: float,
    basis_policy: BasisPolicy,
    rng: np.random.Generator,
) -> tuple[PulseBatch, EveRecord]:
    n = len(batch)
    pick = rng.random(n)
    basis_draw = rng.integers(0, 2, n, dtype=np.int8)
    guess = rng.integers(0, 2, n, dtype=np.int8)

    record = EveRecord.empty(n)
    # an empty pulse gives Eve nothing to measure
    touched = (pick < fraction) & (batch.photon_count > 0)
    eve_basis = basis_draw if BasisPolicy(basis_policy) is BasisPolicy.RANDOM else np.zeros(n, dtype=np.int8)
    eve_bit = np.where(eve_basis == batch.basis, batch.bit, guess).astype(np.int8)

    out = batch.copy()
    out.bit = np.where(touched, eve_bit, batch.bit).astype(np.int8)
    out.basis = np.where(touched, eve_basis, batch.basis).astype(np.int8)
    out.photon_count = np.where(touched, 1, batch.photon_count).astype(np.int64)
    record.touched = touched
    record.eve_basis = np.where(touched, eve_basis, -1).astype(np.int8)
    record.eve_bit = np.where(touched, eve_bit, -1).astype(np.int8)
    return out, record


def pns_batch(batch: PulseBatch, block_prob: float, rng: np.random.Generator) -> tuple[PulseBatch, EveRecord]:
    """Steal one photon from every multi-photon pulse, block singles.

    Eve keeps the stolen photon in memory and reads it after the basis
    announcement, so ``eve_bit`` is always Alice's bit.  The returned pulses
    travel over Eve's lossless link; callers must not apply fibre loss to them.
    """
    n = len(batch)
    block_draw = rng.random(n)
    record = EveRecord.empty(n)
    multi = batch.photon_count >= 2
    single_blocked = (batch.photon_count == 1) & (block_draw < block_prob)

    out = batch.copy()
    out.photon_count = np.where(multi, batch.photon_count - 1, np.where(single_blocked, 0, batch.photon_count))
    record.touched = multi | single_blocked
    record.eve_basis = np.where(multi, batch.basis, -1).astype(np.int8)
    record.eve_bit = np.where(multi, batch.bit, -1).astype(np.int8)
    record.photons_stolen = multi.astype(np.int64)
    return out, record


def intercept_resend(
    pulse: PhotonPulse, fraction: float, basis_policy: BasisPolicy, rng: np.random.Generator
) -> tuple[PhotonPulse, dict[str, Any]]:
    out, record = intercept_resend_batch(PulseBatch.from_pulses([pulse]), fraction, basis_policy, rng)
    return out.pulse(0), record.entry(0)


def pns_attack(pulse: PhotonPulse, block_prob: float, rng: np.random.Generator) -> tuple[PhotonPulse, dict[str, Any]]:
    out, record = pns_batch(PulseBatch.from_pulses([pulse]), block_prob, rng)
    return out.pulse(0), record.entry(0)


def compensating_block_prob(mu: float, channel: ChannelParams) -> float:
    """Single-photon blocking probability that keeps the signal gain unchanged.

    Without Eve a pulse reaches Bob non-empty with probability
    ``1 - exp(-t*mu)``.  Under PNS every multi-photon pulse arrives (minus one
    photon) and singles arrive with probability ``1 - b``; equating the two
    gives ``b``.  Returns 1.0 when full compensation is impossible.
    """
    target = 1.0 - math.exp(-channel.transmittance * mu)
    p1 = mu * math.exp(-mu)
    p_multi = 1.0 - math.exp(-mu) * (1.0 + mu)
    if p1 <= 0.0:
        return 0.0
    b = 1.0 - (target - p_multi) / p1
    return float(min(1.0, max(0.0, b)))


@dataclass
class FaultLog:
    suppressed: np.ndarray
    basis_flipped: np.ndarray


def fault_inject_outcomes(
    outcomes: OutcomeBatch,
    fault: Fault,
    rate: float,
    rng: np.random.Generator,
) -> tuple[OutcomeBatch, FaultLog]:
    """Perturb Bob's detection stream; every touched round is logged."""
    _check_prob(rate, "rate")
    n = len(outcomes.clicked)
    draw = rng.random(n)
    hit = draw < rate
    suppressed = np.zeros(n, dtype=bool)
    flipped = np.zeros(n, dtype=bool)
    clicked = outcomes.clicked.copy()
    basis = outcomes.measured_basis.copy()
    if Fault(fault) is Fault.DETECTOR_BLIND:
        suppressed = hit & clicked
        clicked = clicked & ~hit
    else:
        flipped = hit
        basis = np.where(hit, 1 - basis, basis).astype(np.int8)
    bits = np.where(clicked, outcomes.bit, 0).astype(np.int8)
    return OutcomeBatch(clicked, bits, basis), FaultLog(suppressed, flipped)


def fault_inject_channel(channel: ChannelParams, fault: Fault, rate: float) -> ChannelParams:
    """Fold a fault into the channel description.

    A blinded detector is a lower efficiency.  A basis-flip calibration fault
    turns half of the affected sifted rounds into errors, which on the channel
    level is an extra independent flip with probability ``rate/2``.
    """
    _check_prob(rate, "rate")
    if Fault(fault) is Fault.DETECTOR_BLIND:
        eff = channel.detector_efficiency * (1.0 - rate)
        if eff <= 0.0:
            raise InvalidParameter("a fully blinded detector has no valid channel description")
        return ChannelParams(
            channel.transmittance, channel.depolarize_prob, channel.dark_count_prob, eff, channel.timing_jitter
        )
    p = channel.depolarize_prob
    extra = rate / 2.0
    combined = p * (1.0 - extra) + extra * (1.0 - p)
    return ChannelParams(
        channel.transmittance, min(0.5, combined), channel.dark_count_prob,
        channel.detector_efficiency, channel.timing_jitter,
    )


def fault_inject(target, fault: Fault, rate: float, rng: np.random.Generator | None = None):
    """Apply a fault to a :class:`ChannelParams` or an :class:`OutcomeBatch`.

    A single :class:`DetectionOutcome` is accepted too and treated as a
    one-round stream.  Outcome streams return ``(perturbed, FaultLog)``.
    """
    if isinstance(target, ChannelParams):
        return fault_inject_channel(target, fault, rate)
    if rng is None:
        raise InvalidParameter("outcome faults need an rng")
    if isinstance(target, DetectionOutcome):
        basis = 0 if target.measured_basis is None else int(target.measured_basis)
        batch = OutcomeBatch(
            np.array([target.clicked]), np.array([target.bit or 0], dtype=np.int8), np.array([basis], dtype=np.int8)
        )
        out, log = fault_inject_outcomes(batch, fault, rate, rng)
        return out.outcome(0), log
    return fault_inject_outcomes(target, fault, rate, rng)


def adapt_strategy(
    history: list[tuple[int, float]],
    arms: int | list | tuple,
    epsilon: float,
    rng: np.random.Generator,
) -> int:
    """Epsilon-greedy choice of the next arm.

    ``arms`` is the arm list or its length.  With no observations at all the
    choice is uniform.  Otherwise arms never pulled have mean 0 and
    exploitation takes the argmax of empirical means, lowest index on ties.
    """
    k = arms if isinstance(arms, int) else len(arms)
    if k <= 0:
        raise InvalidParameter("adapt_strategy needs at least one arm")
    if not 0.0 < epsilon < 1.0:
        raise InvalidParameter("epsilon must be in (0, 1)")
    explore = rng.random() < epsilon
    pick = int(rng.integers(0, k))
    if explore or not history:
        return pick
    totals = np.zeros(k)
    counts = np.zeros(k)
    for arm, reward in history:
        if not math.isfinite(reward):
            raise InvalidParameter("rewards must be finite")
        totals[arm] += reward
        counts[arm] += 1
    means = np.divide(totals, counts, out=np.zeros(k), where=counts > 0)
    return int(np.argmax(means))


def session_reward(eve_known_fraction: float, aborted: bool, weights: tuple[float, float] = (1.0, 1.0)) -> float:
    info_w, penalty_w = weights
    return info_w * eve_known_fraction - penalty_w * (1.0 if aborted else 0.0)


@dataclass
class BanditState:
    """Running state of an :class:`Adaptive` strategy within one campaign."""

    strategy: Adaptive
    history: list[tuple[int, float]] = field(default_factory=list)

    def choose(self, rng: np.random.Generator) -> int:
        return adapt_strategy(self.history, self.strategy.arms, self.strategy.epsilon, rng)

    def record(self, arm: int, eve_known_fraction: float, aborted: bool) -> float:
        reward = session_reward(eve_known_fraction, aborted, self.strategy.reward_weights)
        self.history.append((arm, reward))
        return reward

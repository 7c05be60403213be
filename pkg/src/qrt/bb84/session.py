"""BB84 / decoy-state session state machine."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Iterable, Sequence

import numpy as np

from .. import adversary as adv
from ..qubit_core import (
    ChannelParams,
    DetectionOutcome,
    IntensityClass,
    InvalidParameter,
    OutcomeBatch,
    measure_batch,
    prepare_batch,
    transmit_batch,
)
from ..rng import make_rng, split
from . import wire
from .amplification import final_key_length, toeplitz_hash
from .decoy import MIN_PULSES, DecoyAnalysis, decoy_estimate
from .reconciliation import ReconciliationFailed, error_correct


class AbortReason(str, Enum):
    QBER_EXCEEDED = "QberExceeded"
    DECOY_ANOMALY = "DecoyAnomaly"
    RECONCILIATION_FAILED = "ReconciliationFailed"
    INSUFFICIENT_KEY = "InsufficientKey"


@dataclass(frozen=True)
class SessionConfig:
    n_rounds: int = 10_000
    mu_signal: float = 0.5
    mu_decoy: float = 0.1
    mu_vacuum: float = 0.0
    decoy_enabled: bool = False
    intensity_probs: tuple[float, float, float] = (0.7, 0.2, 0.1)
    basis_prob: float = 0.5
    sample_fraction: float = 0.1
    qber_abort_threshold: float = 0.11
    pa_safety_bits: int = 30
    pns_tolerance_sigma: float = 3.0
    cascade_passes: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "intensity_probs", tuple(float(p) for p in self.intensity_probs))
        problems = []
        if not isinstance(self.n_rounds, int) or self.n_rounds <= 0:
            problems.append("n_rounds must be a positive integer")
        if self.mu_signal < 0 or self.mu_decoy < 0:
            problems.append("mean photon numbers must be >= 0")
        if self.mu_vacuum != 0:
            problems.append("mu_vacuum must be 0")
        if len(self.intensity_probs) != 3 or any(p < 0 for p in self.intensity_probs):
            problems.append("intensity_probs must be three non-negative reals")
        elif abs(sum(self.intensity_probs) - 1.0) > 1e-9:
            problems.append("intensity_probs must sum to 1")
        if not 0.0 < self.basis_prob < 1.0:
            problems.append("basis_prob must be in (0, 1)")
        if not 0.0 < self.sample_fraction <= 0.5:
            problems.append("sample_fraction must be in (0, 0.5]")
        if not 0.0 < self.qber_abort_threshold < 0.5:
            problems.append("qber_abort_threshold must be in (0, 0.5)")
        if self.pa_safety_bits < 0:
            problems.append("pa_safety_bits must be >= 0")
        if self.decoy_enabled and not self.mu_decoy < self.mu_signal:
            problems.append("mu_decoy must be below mu_signal when decoys are enabled")
        if self.cascade_passes < 1:
            problems.append("cascade_passes must be >= 1")
        if problems:
            raise InvalidParameter("; ".join(problems))

    def mu_of(self, cls: IntensityClass) -> float:
        return {IntensityClass.SIGNAL: self.mu_signal, IntensityClass.DECOY: self.mu_decoy,
                IntensityClass.VACUUM: self.mu_vacuum}[cls]

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["intensity_probs"] = list(self.intensity_probs)
        return d


@dataclass
class Transcript:
    """Full record of one session.  Per-round data is columnar."""

    alice_bits: np.ndarray
    alice_bases: np.ndarray
    intensity_class: np.ndarray
    eve_touched: np.ndarray
    bob_bases: np.ndarray
    clicked: np.ndarray
    bob_bits: np.ndarray
    sifted_indices: np.ndarray
    revealed_indices: np.ndarray
    key_indices: np.ndarray
    parity_messages: list[bytes]
    alice_final_key: np.ndarray | None
    bob_final_key: np.ndarray | None
    abort_reason: AbortReason | None
    leaked_bits: int = 0
    decoy: DecoyAnalysis | None = None
    eve: adv.EveRecord | None = None
    fault_log: adv.FaultLog | None = None

    def outcome(self, i: int) -> DetectionOutcome:
        if not self.clicked[i]:
            return DetectionOutcome(False)
        return DetectionOutcome.click(int(self.bob_bits[i]), int(self.bob_bases[i]))

    @property
    def sift_message(self) -> bytes:
        return wire.encode_sift(0, self.alice_bases)


@dataclass
class Telemetry:
    session_id: str
    seed: int
    sift_ratio: float
    qber_estimate: float | None
    gain_per_intensity: dict[str, float]
    per_basis_click_rate: tuple[float, float]
    dark_rate_estimate: float
    timing_variance: float
    gain_counts: dict[str, tuple[int, int]] = field(default_factory=dict)

    def gain(self, cls: IntensityClass) -> float:
        return self.gain_per_intensity.get(cls.name.lower(), 0.0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "seed": self.seed,
            "sift_ratio": self.sift_ratio,
            "qber_estimate": self.qber_estimate,
            "gain_per_intensity": dict(self.gain_per_intensity),
            "per_basis_click_rate": list(self.per_basis_click_rate),
            "dark_rate_estimate": self.dark_rate_estimate,
            "timing_variance": self.timing_variance,
            "gain_counts": {k: list(v) for k, v in self.gain_counts.items()},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Telemetry:
        return cls(
            d["session_id"], d["seed"], d["sift_ratio"], d["qber_estimate"], dict(d["gain_per_intensity"]),
            tuple(d["per_basis_click_rate"]), d["dark_rate_estimate"], d["timing_variance"],
            {k: tuple(v) for k, v in d.get("gain_counts", {}).items()},
        )


TELEMETRY_COLUMNS = (
    "session_id", "seed", "sift_ratio", "qber", "gain_signal", "gain_decoy", "gain_vacuum",
    "click_rect", "click_diag", "dark_rate", "timing_var",
)


def telemetry_row(t: Telemetry) -> list[Any]:
    return [
        t.session_id, t.seed, t.sift_ratio, "" if t.qber_estimate is None else t.qber_estimate,
        t.gain(IntensityClass.SIGNAL), t.gain(IntensityClass.DECOY), t.gain(IntensityClass.VACUUM),
        t.per_basis_click_rate[0], t.per_basis_click_rate[1], t.dark_rate_estimate, t.timing_variance,
    ]


def telemetry_csv(rows: Iterable[Telemetry]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TELEMETRY_COLUMNS)
    for t in rows:
        writer.writerow(telemetry_row(t))
    return buf.getvalue()


def sift(alice_bases: Sequence[int], bob_bases: Sequence[int], outcomes) -> np.ndarray:
    """Indices where Bob clicked and both used the same basis, in order.

    ``outcomes`` may be an :class:`OutcomeBatch`, a boolean click array, or a
    sequence of :class:`DetectionOutcome`.
    """
    a = np.asarray(alice_bases)
    b = np.asarray(bob_bases)
    if isinstance(outcomes, OutcomeBatch):
        clicked = np.asarray(outcomes.clicked, dtype=bool)
    elif len(outcomes) and isinstance(outcomes[0], DetectionOutcome):
        clicked = np.array([o.clicked for o in outcomes], dtype=bool)
    else:
        clicked = np.asarray(outcomes, dtype=bool)
    if not len(a) == len(b) == len(clicked):
        raise InvalidParameter("sift inputs must have equal length")
    return np.flatnonzero(clicked & (a == b))


def estimate_qber(
    alice_sifted, bob_sifted, sample_fraction: float, rng: np.random.Generator
) -> tuple[float | None, np.ndarray]:
    """Reveal a uniform sample of sifted positions and return its error rate.

    Returns ``(None, [])`` for an empty sifted key (undefined, not zero).
    The second element holds positions into the sifted arrays.
    """
    a = np.asarray(alice_sifted)
    b = np.asarray(bob_sifted)
    if a.shape != b.shape:
        raise InvalidParameter("sifted strings must have equal length")
    if not 0.0 < sample_fraction <= 0.5:
        raise InvalidParameter("sample_fraction must be in (0, 0.5]")
    n = len(a)
    if n == 0:
        return None, np.zeros(0, dtype=np.int64)
    k = min(n, max(1, int(round(sample_fraction * n))))
    revealed = np.sort(rng.choice(n, size=k, replace=False))
    return float(np.count_nonzero(a[revealed] != b[revealed]) / k), revealed


def _rate(num: int, den: int) -> float:
    return num / den if den else 0.0


def run_session(
    config: SessionConfig,
    channel: ChannelParams,
    adversary: adv.AdversaryStrategy | None = None,
    seed: int = 0,
    session_id: str | None = None,
) -> tuple[Transcript, Telemetry]:
    """Run one full session.

    Aborts are reported in ``Transcript.abort_reason``; Telemetry is filled
    in whatever the outcome.  Each stage draws from its own child stream of
    ``seed`` so that a passive adversary leaves every other draw unchanged.
    """
    if isinstance(adversary, adv.Adaptive):
        raise InvalidParameter("run_session takes a concrete strategy; resolve Adaptive arms first")
    session_id = session_id or f"s{seed:016x}"
    n = config.n_rounds
    alice_rng = make_rng(seed, "alice")
    eve_rng = make_rng(seed, "eve")
    channel_rng = make_rng(seed, "channel")
    bob_rng = make_rng(seed, "bob")
    post_rng = make_rng(seed, "post")

    bits = alice_rng.integers(0, 2, n, dtype=np.int8)
    bases = (alice_rng.random(n) >= config.basis_prob).astype(np.int8)
    if config.decoy_enabled:
        classes = alice_rng.choice(3, size=n, p=np.asarray(config.intensity_probs)).astype(np.int8)
    else:
        classes = np.zeros(n, dtype=np.int8)
    mu_table = np.array([config.mu_signal, config.mu_decoy, config.mu_vacuum])
    pulses = prepare_batch(bits, bases, mu_table[classes], classes, alice_rng)

    eve = adv.EveRecord.empty(n)
    transmittance: float | None = None
    fault: adv.FaultInject | None = None
    if isinstance(adversary, adv.InterceptResend):
        pulses, eve = adv.intercept_resend_batch(pulses, adversary.fraction, adversary.basis_policy, eve_rng)
    elif isinstance(adversary, adv.PhotonNumberSplit):
        pulses, eve = adv.pns_batch(pulses, adversary.block_prob, eve_rng)
        transmittance = 1.0  # Eve's own lossless link replaces the fibre
    elif isinstance(adversary, adv.FaultInject):
        fault = adversary

    arrival = transmit_batch(pulses, channel, channel_rng, transmittance)
    bob_bases = (bob_rng.random(n) >= config.basis_prob).astype(np.int8)
    outcomes = measure_batch(arrival, bob_bases, channel, bob_rng)
    fault_log = None
    if fault is not None:
        outcomes, fault_log = adv.fault_inject_outcomes(outcomes, fault.fault, fault.rate, eve_rng)

    clicked = outcomes.clicked
    recorded_bases = outcomes.measured_basis
    n_clicks = int(np.count_nonzero(clicked))
    timing = bob_rng.normal(0.0, channel.timing_jitter, n_clicks) if channel.timing_jitter > 0 else np.zeros(n_clicks)

    gain_counts: dict[str, tuple[int, int]] = {}
    for cls in IntensityClass:
        mask = classes == cls
        if config.decoy_enabled or cls is IntensityClass.SIGNAL:
            gain_counts[cls.name.lower()] = (int(np.count_nonzero(mask)), int(np.count_nonzero(clicked & mask)))
    gains = {k: _rate(c, p) for k, (p, c) in gain_counts.items()}
    rect = recorded_bases == 0
    click_rates = (
        _rate(int(np.count_nonzero(clicked & rect)), int(np.count_nonzero(rect))),
        _rate(int(np.count_nonzero(clicked & ~rect)), int(np.count_nonzero(~rect))),
    )

    sifted = sift(bases, recorded_bases, clicked)
    signal_sifted = sifted[classes[sifted] == IntensityClass.SIGNAL]
    qber, revealed_pos = estimate_qber(bits[signal_sifted], outcomes.bit[signal_sifted], config.sample_fraction, post_rng)
    revealed = signal_sifted[revealed_pos]
    # decoy and vacuum sifted bits are announced for statistics; never key material
    announced = np.union1d(revealed, sifted[classes[sifted] != IntensityClass.SIGNAL])
    key_idx = np.setdiff1d(signal_sifted, revealed)

    telemetry = Telemetry(
        session_id=session_id,
        seed=seed,
        sift_ratio=_rate(len(sifted), n_clicks),
        qber_estimate=qber,
        gain_per_intensity=gains,
        per_basis_click_rate=click_rates,
        dark_rate_estimate=gains.get("vacuum", 0.0),
        timing_variance=float(np.var(timing)) if n_clicks else 0.0,
        gain_counts=gain_counts,
    )
    transcript = Transcript(
        alice_bits=bits, alice_bases=bases, intensity_class=classes, eve_touched=eve.touched.copy(),
        bob_bases=recorded_bases, clicked=clicked, bob_bits=outcomes.bit,
        sifted_indices=sifted, revealed_indices=announced, key_indices=key_idx,
        parity_messages=[], alice_final_key=None, bob_final_key=None, abort_reason=None,
        eve=eve, fault_log=fault_log,
    )

    if qber is None or len(key_idx) == 0:
        transcript.abort_reason = AbortReason.INSUFFICIENT_KEY
        return transcript, telemetry
    if qber > config.qber_abort_threshold:
        transcript.abort_reason = AbortReason.QBER_EXCEEDED
        return transcript, telemetry

    if config.decoy_enabled and all(gain_counts[c][0] >= MIN_PULSES for c in ("signal", "decoy", "vacuum")):
        decoy_sifted = sifted[classes[sifted] == IntensityClass.DECOY]
        e_decoy = _rate(int(np.count_nonzero(bits[decoy_sifted] != outcomes.bit[decoy_sifted])), len(decoy_sifted))
        transcript.decoy = decoy_estimate(
            {IntensityClass(i): gain_counts[IntensityClass(i).name.lower()] for i in range(3)},
            {cls: config.mu_of(cls) for cls in IntensityClass},
            detector_efficiency=channel.detector_efficiency,
            tolerance_sigma=config.pns_tolerance_sigma,
            decoy_error_rate=e_decoy if len(decoy_sifted) else None,
        )
        if transcript.decoy.pns_suspected:
            transcript.abort_reason = AbortReason.DECOY_ANOMALY
            return transcript, telemetry

    alice_key = bits[key_idx].astype(np.uint8)
    bob_key = outcomes.bit[key_idx].astype(np.uint8)
    # rule-of-three upper bound keeps the block size finite when no error was sampled
    hint = min(0.49, max(qber, 3.0 / max(len(revealed), 1)))
    try:
        rec = error_correct(alice_key, bob_key, hint, seed=split(seed, "cascade"), min_passes=config.cascade_passes)
    except ReconciliationFailed as exc:
        transcript.parity_messages = exc.parity_messages
        transcript.leaked_bits = exc.leaked_bits
        transcript.abort_reason = AbortReason.RECONCILIATION_FAILED
        return transcript, telemetry
    transcript.parity_messages = rec.parity_messages
    transcript.leaked_bits = rec.leaked_bits

    m = final_key_length(len(key_idx), qber, rec.leaked_bits, config.pa_safety_bits)
    if m <= 0:
        transcript.abort_reason = AbortReason.INSUFFICIENT_KEY
        return transcript, telemetry
    seed_bits = post_rng.integers(0, 2, len(key_idx) + m - 1, dtype=np.uint8)
    transcript.alice_final_key = toeplitz_hash(alice_key, seed_bits, m)
    transcript.bob_final_key = toeplitz_hash(rec.shared_key, seed_bits, m)
    return transcript, telemetry


def eve_known_fraction(transcript: Transcript) -> float:
    """Share of key-relevant sifted bits whose value Eve holds exactly."""
    idx = transcript.key_indices
    if transcript.eve is None or len(idx) == 0:
        return 0.0
    known = transcript.eve.known_bits(transcript.alice_bits)[idx]
    return float(np.count_nonzero(known) / len(idx))


def session_config_from_dict(d: dict[str, Any]) -> SessionConfig:
    names = {f.name for f in fields(SessionConfig)}
    extra = set(d) - names
    if extra:
        raise InvalidParameter(f"unknown session keys: {sorted(extra)}")
    kw = dict(d)
    if "intensity_probs" in kw:
        kw["intensity_probs"] = tuple(kw["intensity_probs"])
    return SessionConfig(**kw)


def channel_from_dict(d: dict[str, Any]) -> ChannelParams:
    names = {f.name for f in fields(ChannelParams)}
    extra = set(d) - names
    if extra:
        raise InvalidParameter(f"unknown channel keys: {sorted(extra)}")
    return ChannelParams(**d)


def channel_to_dict(c: ChannelParams) -> dict[str, Any]:
    return asdict(c)


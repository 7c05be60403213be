"""Transcript forensics and the harvest-now-decrypt-later drill."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

import numpy as np

from ..adversary import EveRecord
from ..anomaly import FEATURES, FeatureVector
from ..bb84.decoy import MIN_PULSES, decoy_estimate
from ..bb84.session import Telemetry, Transcript
from ..qubit_core import IntensityClass, InvalidParameter
from ..state_anchor import AdversaryPower, Scheme

# a deviation counts as a signature once it clears this many baseline sigmas
SIGNATURE_SIGMA = 4.0
ABSOLUTE_QBER_ALARM = 0.05


class Attribution(str, Enum):
    INTERCEPT_RESEND = "InterceptResend"
    PNS = "PhotonNumberSplit"
    DETECTOR_BLIND = "DetectorBlind"


@dataclass(frozen=True)
class FeatureBaseline:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector]) -> FeatureBaseline:
        X = np.stack([v.values for v in vectors])
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1e-12))

    def deviations(self, v: FeatureVector) -> dict[str, float]:
        z = (v.values - self.mean) / self.std
        return {name: float(val) for name, val in zip(FEATURES, z)}


@dataclass
class ForensicSummary:
    session_id: str
    compromised_round_ids: list[int]
    eve_information_fraction: float
    attributed_strategy: Attribution | None
    evidence: dict[str, float]

    def to_dict(self) -> dict[str, Any]:
        """Report form: the round list is summarized by count and SHA-256."""
        ids = np.asarray(self.compromised_round_ids, dtype=">u8").tobytes()
        return {
            "session_id": self.session_id,
            "compromised_rounds": len(self.compromised_round_ids),
            "compromised_rounds_sha256": hashlib.sha256(ids).hexdigest(),
            "eve_information_fraction": self.eve_information_fraction,
            "attributed_strategy": None if self.attributed_strategy is None else self.attributed_strategy.value,
            "evidence": dict(sorted(self.evidence.items())),
        }


def eve_information_fraction(transcript: Transcript, eve: EveRecord) -> float:
    """Fraction of key-relevant sifted rounds whose bit Eve holds correctly."""
    idx = transcript.key_indices
    if len(idx) == 0:
        return 0.0
    known = eve.known_bits(transcript.alice_bits)[idx]
    return float(np.count_nonzero(known)) / len(idx)


def _pns_signature(telemetry: Telemetry, transcript: Transcript, mu: dict[IntensityClass, float] | None) -> bool:
    if transcript.decoy is not None:
        return transcript.decoy.pns_suspected
    counts = telemetry.gain_counts
    if mu is None or not all(k in counts and counts[k][0] >= MIN_PULSES for k in ("signal", "decoy", "vacuum")):
        return False
    try:
        analysis = decoy_estimate({c: tuple(counts[c.name.lower()]) for c in IntensityClass}, mu)
    except InvalidParameter:
        return False
    return analysis.pns_suspected


def forensic_trace(
    transcript: Transcript,
    eve_record: EveRecord,
    telemetry: Telemetry,
    baseline: FeatureBaseline | None = None,
    mu: dict[IntensityClass, float] | None = None,
) -> ForensicSummary:
    """Cross-reference Eve's ground truth with the transcript and attribute.

    Attribution only looks at observable statistics, checked in order:
    decoy-yield asymmetry (PNS), raised QBER (intercept-resend), then a
    signal-gain drop without raised QBER (detector blinding).
    """
    touched = eve_record.touched.astype(bool)
    compromised = np.intersect1d(np.flatnonzero(touched), transcript.sifted_indices)
    fraction = eve_information_fraction(transcript, eve_record)
    v = FeatureVector.from_telemetry(telemetry)
    evidence = baseline.deviations(v) if baseline is not None else {}

    qber_z = evidence.get("qber", 0.0)
    gain_z = evidence.get("gain_signal", 0.0)
    qber = telemetry.qber_estimate
    attribution: Attribution | None = None
    if _pns_signature(telemetry, transcript, mu):
        attribution = Attribution.PNS
    elif qber is not None and (qber_z > SIGNATURE_SIGMA if baseline is not None else qber > ABSOLUTE_QBER_ALARM):
        attribution = Attribution.INTERCEPT_RESEND
    elif baseline is not None and gain_z < -SIGNATURE_SIGMA:
        attribution = Attribution.DETECTOR_BLIND
    return ForensicSummary(telemetry.session_id, compromised.tolist(), fraction, attribution, evidence)


# -- retro-decryption --------------------------------------------------------


class RetroOutcome(str, Enum):
    COMPROMISED = "Compromised"
    SAFE = "Safe"


@dataclass(frozen=True)
class WrappedPayload:
    """A payload stored by an eavesdropper, wrapped under a session key."""

    payload_id: str
    session_id: str
    scheme: Scheme
    harvest_epoch: int
    ciphertext: bytes
    plaintext_sha256: str


def _keystream(key: bytes, n: int) -> bytes:
    return hashlib.shake_256(b"qrt-wrap" + key).digest(n)


def wrap_payload(payload_id: str, session_id: str, key_bits, plaintext: bytes, scheme: Scheme, harvest_epoch: int) -> WrappedPayload:
    key = np.packbits(np.asarray(key_bits, dtype=np.uint8)).tobytes()
    ct = bytes(a ^ b for a, b in zip(plaintext, _keystream(key, len(plaintext))))
    return WrappedPayload(
        payload_id, session_id, Scheme(scheme), harvest_epoch, ct, hashlib.sha256(plaintext).hexdigest()
    )


@dataclass(frozen=True)
class RetroResult:
    payload_id: str
    session_id: str
    scheme: Scheme
    harvest_epoch: int
    outcome: RetroOutcome

    def to_dict(self) -> dict[str, Any]:
        return {
            "payload_id": self.payload_id, "session_id": self.session_id, "scheme": self.scheme.value,
            "harvest_epoch": self.harvest_epoch, "outcome": self.outcome.value,
        }


def retro_decrypt(stored: Sequence[WrappedPayload], adversary: AdversaryPower) -> list[RetroResult]:
    """A quantum adversary inverts every Classical wrapper and nothing else."""
    out = []
    for p in stored:
        broken = p.scheme is Scheme.CLASSICAL and adversary.quantum
        out.append(RetroResult(
            p.payload_id, p.session_id, p.scheme, p.harvest_epoch,
            RetroOutcome.COMPROMISED if broken else RetroOutcome.SAFE,
        ))
    return out

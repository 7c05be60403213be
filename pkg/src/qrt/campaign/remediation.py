"""Findings and the one-rule-per-iteration remediation table."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Sequence

from ..bb84.session import SessionConfig

QBER_STEP = 0.02
QBER_FLOOR = 0.05


class FindingKind(str, Enum):
    PNS_UNDETECTED = "PnsUndetected"
    UNDETECTED_EAVESDROPPING = "UndetectedEavesdropping"
    FUZZ_KEY_MISMATCH = "FuzzKeyMismatchUndetected"
    FUZZ_VIOLATION = "FuzzInvariantViolation"
    SIDE_CHANNEL_LEAK = "SideChannelLeak"
    DETECTOR_EVASION = "DetectorEvasion"
    ANOMALY_MISSED = "AnomalyMissed"
    KEY_MISMATCH = "FinalKeyMismatch"
    WEAK_RANDOMNESS = "WeakKeyRandomness"
    STATE_PROOF_FORGERY = "StateProofForgery"
    HARVEST_DECRYPT = "HarvestNowDecryptLater"


@dataclass
class Finding:
    kind: FindingKind
    detail: str
    evidence: list[str] = field(default_factory=list)
    metrics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value, "detail": self.detail,
            "evidence": list(self.evidence), "metrics": dict(sorted(self.metrics.items())),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Finding:
        return cls(FindingKind(d["kind"]), d["detail"], list(d["evidence"]), dict(d["metrics"]))


@dataclass(frozen=True)
class Posture:
    """Everything remediation may change: session config plus two switches."""

    session: SessionConfig = SessionConfig()
    strict_digest: bool = False
    leak_mitigated: bool = False


@dataclass(frozen=True)
class NoChange:
    reason: str = "no applicable rule"


@dataclass(frozen=True)
class Remediation:
    posture: Posture
    rule: str
    field: str
    before: Any
    after: Any


def remediate(findings: Sequence[Finding], current: Posture) -> Remediation | NoChange:
    """Apply the first rule, in fixed priority, whose precondition holds."""
    kinds = {f.kind for f in findings}
    s = current.session
    if FindingKind.PNS_UNDETECTED in kinds and not s.decoy_enabled:
        return Remediation(replace(current, session=replace(s, decoy_enabled=True)),
                           "enable-decoys", "session.decoy_enabled", False, True)
    if FindingKind.UNDETECTED_EAVESDROPPING in kinds and s.qber_abort_threshold > QBER_FLOOR:
        new = round(max(QBER_FLOOR, s.qber_abort_threshold - QBER_STEP), 10)
        return Remediation(replace(current, session=replace(s, qber_abort_threshold=new)),
                           "lower-qber-threshold", "session.qber_abort_threshold", s.qber_abort_threshold, new)
    if FindingKind.FUZZ_KEY_MISMATCH in kinds and not current.strict_digest:
        return Remediation(replace(current, strict_digest=True), "strict-digest", "strict_digest", False, True)
    if FindingKind.SIDE_CHANNEL_LEAK in kinds and not current.leak_mitigated:
        return Remediation(replace(current, leak_mitigated=True), "zero-leak-weight", "leak_weight", "model", 0.0)
    return NoChange("no rule applies" if findings else "no findings")

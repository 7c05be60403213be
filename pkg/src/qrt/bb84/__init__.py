"""BB84 / decoy-state sessions and their post-processing."""

from .amplification import (
    binary_entropy,
    final_key_length,
    privacy_amplify,
    toeplitz_hash,
)
from .decoy import DecoyAnalysis, decoy_estimate
from .randomness import RandomnessVerdict, test_key_randomness
from .reconciliation import (
    ReconciliationFailed,
    ReconciliationResult,
    error_correct,
    verification_digest,
)
from .session import (
    AbortReason,
    SessionConfig,
    Telemetry,
    Transcript,
    estimate_qber,
    eve_known_fraction,
    run_session,
    sift,
    telemetry_csv,
)

__all__ = [
    "AbortReason", "DecoyAnalysis", "RandomnessVerdict", "ReconciliationFailed", "ReconciliationResult",
    "SessionConfig", "Telemetry", "Transcript", "binary_entropy", "decoy_estimate", "error_correct",
    "estimate_qber", "eve_known_fraction", "final_key_length", "privacy_amplify", "run_session", "sift",
    "telemetry_csv", "test_key_randomness", "toeplitz_hash", "verification_digest",
]

"""Stake-weighted state attestations under classical and post-quantum oracles.

Signatures are simulated: a validator's tag is HMAC-SHA256 under its secret
over ``(epoch, digest, validator_id)``, and verification recomputes the tag
from the public registry.  A quantum adversary is modelled by the scheme
flag alone: it can produce valid tags for every Classical validator but for
no PostQuantum one.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .rng import split

DEFAULT_TAU = 0.75
DIGEST_LEN = 32
STAKE_TOLERANCE = 1e-9
_DOMAIN = b"qrt-state-attestation-v1"
_ATT = struct.Struct(">Q32sI32s")


class Scheme(str, Enum):
    CLASSICAL = "Classical"
    POST_QUANTUM = "PostQuantum"


class RejectReason(str, Enum):
    MIXED_DIGEST = "MixedDigest"
    DUPLICATE_ATTESTER = "DuplicateAttester"
    BAD_SIGNATURE = "BadSignature"
    BELOW_THRESHOLD = "BelowThreshold"


@dataclass(frozen=True)
class Validator:
    id: int
    stake: float
    scheme: Scheme
    secret: bytes = field(repr=False)


@dataclass(frozen=True)
class ValidatorSet:
    validators: tuple[Validator, ...]

    def __post_init__(self) -> None:
        ids = [v.id for v in self.validators]
        if len(set(ids)) != len(ids):
            raise ValueError("validator ids must be unique")
        if any(v.stake <= 0 for v in self.validators):
            raise ValueError("stakes must be positive")
        if abs(sum(v.stake for v in self.validators) - 1.0) > STAKE_TOLERANCE:
            raise ValueError("stakes must sum to 1")

    @classmethod
    def build(cls, stakes: Sequence[float], schemes: Sequence[Scheme | str] | Scheme | str, seed: int = 0) -> ValidatorSet:
        """Normalize ``stakes`` to total 1 and derive secrets from ``seed``."""
        total = float(sum(stakes))
        if total <= 0:
            raise ValueError("total stake must be positive")
        if isinstance(schemes, (Scheme, str)):
            schemes = [schemes] * len(stakes)
        if len(schemes) != len(stakes):
            raise ValueError("one scheme per validator")
        return cls(tuple(
            Validator(i, s / total, Scheme(sc), split(seed, "validator", i).to_bytes(8, "big") * 4)
            for i, (s, sc) in enumerate(zip(stakes, schemes))
        ))

    def __iter__(self):
        return iter(self.validators)

    def __len__(self) -> int:
        return len(self.validators)

    def by_id(self) -> dict[int, Validator]:
        return {v.id: v for v in self.validators}

    def stake_of(self, ids: Iterable[int]) -> float:
        table = self.by_id()
        return float(sum(table[i].stake for i in set(ids)))


@dataclass(frozen=True)
class Attestation:
    epoch: int
    state_digest: bytes
    validator_id: int
    signature: bytes

    def to_bytes(self) -> bytes:
        return _ATT.pack(self.epoch, self.state_digest, self.validator_id, self.signature)

    @classmethod
    def from_bytes(cls, raw: bytes) -> Attestation:
        return cls(*_ATT.unpack(raw))


@dataclass(frozen=True)
class StateProof:
    epoch: int
    state_digest: bytes
    attestations: tuple[Attestation, ...]
    attested_stake: float

    def to_bytes(self) -> bytes:
        """epoch:u64 | digest:32 | count:u32 | fixed 76-byte attestations."""
        head = struct.pack(">Q32sI", self.epoch, self.state_digest, len(self.attestations))
        return head + b"".join(a.to_bytes() for a in self.attestations)

    @classmethod
    def from_bytes(cls, raw: bytes, attested_stake: float = 0.0) -> StateProof:
        epoch, digest, count = struct.unpack_from(">Q32sI", raw)
        body = raw[44:]
        if len(body) != count * _ATT.size:
            raise ValueError("attestation count does not match proof length")
        atts = tuple(Attestation.from_bytes(body[i * _ATT.size:(i + 1) * _ATT.size]) for i in range(count))
        return cls(epoch, digest, atts, attested_stake)

    @property
    def size_bytes(self) -> int:
        return 44 + _ATT.size * len(self.attestations)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


@dataclass(frozen=True)
class InsufficientStake:
    achieved_stake: float


@dataclass(frozen=True)
class Accept:
    attested_stake: float
    signature_checks: int


@dataclass(frozen=True)
class Reject:
    reason: RejectReason
    signature_checks: int = 0


@dataclass(frozen=True)
class AdversaryPower:
    controlled: frozenset = frozenset()
    quantum: bool = False


@dataclass(frozen=True)
class Infeasible:
    reason: RejectReason


def _check_digest(digest: bytes) -> bytes:
    if len(digest) != DIGEST_LEN:
        raise ValueError(f"state digest must be {DIGEST_LEN} bytes")
    return bytes(digest)


def state_digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _tag(secret: bytes, epoch: int, digest: bytes, validator_id: int) -> bytes:
    msg = _DOMAIN + struct.pack(">Q32sI", epoch, digest, validator_id)
    return hmac.new(secret, msg, hashlib.sha256).digest()


def attest(validator: Validator, epoch: int, digest: bytes) -> Attestation:
    if not validator.secret:
        raise ValueError("validator has no secret material")
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    digest = _check_digest(digest)
    return Attestation(epoch, digest, validator.id, _tag(validator.secret, epoch, digest, validator.id))


def signature_valid(att: Attestation, registry: dict[int, Validator]) -> bool:
    v = registry.get(att.validator_id)
    if v is None or len(att.state_digest) != DIGEST_LEN:
        return False
    return hmac.compare_digest(att.signature, _tag(v.secret, att.epoch, att.state_digest, v.id))


def meets_threshold(stake: float, tau: float) -> bool:
    # stakes are float sums; a tie with tau up to rounding noise counts as reached
    return stake >= tau - 1e-12


def _check_tau(tau: float) -> None:
    if not 0.5 < tau <= 1.0:
        raise ValueError("tau must be in (0.5, 1]")


def aggregate(attestations: Sequence[Attestation], validators: ValidatorSet, tau: float = DEFAULT_TAU) -> StateProof | InsufficientStake:
    """Untrusted-coordinator aggregation.

    Invalid and duplicate attestations are dropped.  If the remaining ones
    name several ``(epoch, digest)`` pairs, the pair with the most stake
    wins (first seen on ties).
    """
    _check_tau(tau)
    registry = validators.by_id()
    groups: dict[tuple[int, bytes], dict[int, Attestation]] = {}
    for att in attestations:
        if not signature_valid(att, registry):
            continue
        groups.setdefault((att.epoch, att.state_digest), {}).setdefault(att.validator_id, att)
    if not groups:
        return InsufficientStake(0.0)
    best_key, best_stake = None, -1.0
    for key, members in groups.items():
        s = validators.stake_of(members)
        if s > best_stake:
            best_key, best_stake = key, s
    if not meets_threshold(best_stake, tau):
        return InsufficientStake(best_stake)
    members = groups[best_key]
    return StateProof(best_key[0], best_key[1], tuple(members[i] for i in sorted(members)), best_stake)


def verify_proof(proof: StateProof, validators: ValidatorSet, tau: float = DEFAULT_TAU) -> Accept | Reject:
    """Recheck every attestation; the proof's own stake field is ignored."""
    _check_tau(tau)
    registry = validators.by_id()
    checks = 0
    if any(a.epoch != proof.epoch or a.state_digest != proof.state_digest for a in proof.attestations):
        return Reject(RejectReason.MIXED_DIGEST)
    ids = [a.validator_id for a in proof.attestations]
    if len(set(ids)) != len(ids):
        return Reject(RejectReason.DUPLICATE_ATTESTER)
    for att in proof.attestations:
        checks += 1
        if not signature_valid(att, registry):
            return Reject(RejectReason.BAD_SIGNATURE, checks)
    stake = validators.stake_of(ids)
    if not meets_threshold(stake, tau):
        return Reject(RejectReason.BELOW_THRESHOLD, checks)
    return Accept(stake, checks)


def forgeable(validator: Validator, adversary: AdversaryPower) -> bool:
    return validator.id in adversary.controlled or (adversary.quantum and validator.scheme is Scheme.CLASSICAL)


def forge_attempt(
    adversary: AdversaryPower, validators: ValidatorSet, epoch: int, fake_digest: bytes, tau: float = DEFAULT_TAU
) -> StateProof | Infeasible:
    """The adversary signs what it can and self-aggregates, claiming full stake."""
    _check_tau(tau)
    unknown = set(adversary.controlled) - {v.id for v in validators}
    if unknown:
        raise ValueError(f"controlled ids not in validator set: {sorted(unknown)}")
    atts = tuple(attest(v, epoch, fake_digest) for v in validators if forgeable(v, adversary))
    proof = StateProof(epoch, _check_digest(fake_digest), atts, 1.0)
    verdict = verify_proof(proof, validators, tau)
    if isinstance(verdict, Reject):
        return Infeasible(verdict.reason)
    return StateProof(epoch, proof.state_digest, atts, verdict.attested_stake)


def honest_proof(validators: ValidatorSet, signers: Iterable[int], epoch: int, digest: bytes, tau: float = DEFAULT_TAU):
    table = validators.by_id()
    return aggregate([attest(table[i], epoch, digest) for i in signers], validators, tau)


class ConflictingAnchor(Exception):
    """An accepted proof contradicts the digest already anchored for its epoch."""


@dataclass
class AnchorChain:
    """Per-epoch record of accepted digests."""

    validators: ValidatorSet
    tau: float = DEFAULT_TAU
    anchored: dict[int, bytes] = field(default_factory=dict)

    def submit(self, proof: StateProof) -> Accept | Reject:
        verdict = verify_proof(proof, self.validators, self.tau)
        if isinstance(verdict, Reject):
            return verdict
        prior = self.anchored.get(proof.epoch)
        if prior is not None and prior != proof.state_digest:
            raise ConflictingAnchor(f"epoch {proof.epoch} already anchored to another digest")
        self.anchored[proof.epoch] = proof.state_digest
        return verdict

    def confirms(self, epoch: int, digest: bytes) -> bool:
        return self.anchored.get(epoch) == digest

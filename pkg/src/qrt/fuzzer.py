"""Deterministic mutation fuzzer for the post-processing dialogue.

The dialogue is the ordered list of Alice's classical messages in one
session: ``SIFT``, then Cascade ``PARITY`` rounds interleaved with
``DIGEST`` checks (see :mod:`qrt.bb84.wire`).  The target is Bob's
reconciliation-and-verification state machine.  It is fed a mutated copy of
an honest dialogue, and the harness judges the run against ground truth it
holds independently of the target:

* the key Bob releases must equal Alice's reconciled key;
* every message Bob accepts must pass a reference framing check, with
  sequence numbers 0, 1, 2, ... in acceptance order;
* the run must finish within the step budget and raise only typed rejects.

Three reference bugs can be switched on in the target to benchmark the
fuzzer itself.

Replay file layout (big endian)::

    b"QRTF" | version:u8 | case_id:u32 | seed:u64 | bugs:u8 | step_budget:u32
    | base_seed:u64 | n_rounds:u32 | depolarize_ppm:u32
    | n_msgs:u32 | (len:u32 | bytes) * n_msgs
    | n_mutations:u32 | mutation * n_mutations

Each mutation is ``tag:u8`` followed by its fields as u32, except
RandomSplice which ends with ``len:u32 | bytes``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Union

import numpy as np

from .bb84 import wire
from .bb84.reconciliation import (
    CascadeState,
    StepBudgetExceeded,
    error_correct,
    verification_digest,
)
from .qubit_core import ChannelParams, measure_batch, prepare_batch, transmit_batch
from .rng import make_rng, split

MAGIC = b"QRTF"
VERSION = 1
MAX_MUTATIONS = 8
DEFAULT_STEP_BUDGET = 10**6


class Bug(str, Enum):
    DIGEST_LENGTH_UNCHECKED = "digest_length_unchecked"
    PARITY_REORDER_ACCEPTED = "parity_reorder_accepted"
    SIFT_TRUNCATION_PADDED = "sift_truncation_padded"


_BUG_BITS = {Bug.DIGEST_LENGTH_UNCHECKED: 1, Bug.PARITY_REORDER_ACCEPTED: 2, Bug.SIFT_TRUNCATION_PADDED: 4}


# -- mutations ---------------------------------------------------------------


@dataclass(frozen=True)
class BitFlip:
    msg_index: int
    bit_offset: int


@dataclass(frozen=True)
class Truncate:
    msg_index: int
    new_len: int


@dataclass(frozen=True)
class Duplicate:
    msg_index: int


@dataclass(frozen=True)
class Reorder:
    i: int
    j: int


@dataclass(frozen=True)
class LengthCorrupt:
    msg_index: int
    declared_len: int


@dataclass(frozen=True)
class RandomSplice:
    msg_index: int
    offset: int
    data: bytes


Mutation = Union[BitFlip, Truncate, Duplicate, Reorder, LengthCorrupt, RandomSplice]
MUTATION_TYPES = (BitFlip, Truncate, Duplicate, Reorder, LengthCorrupt, RandomSplice)


class MutationError(IndexError):
    """A mutation refers to a message or offset that does not exist."""


def _check(cond: bool, what: str) -> None:
    if not cond:
        raise MutationError(what)


def apply_mutation(dialogue: list[bytes], m: Mutation) -> list[bytes]:
    out = list(dialogue)
    n = len(out)
    if isinstance(m, Reorder):
        _check(0 <= m.i < n and 0 <= m.j < n, f"reorder {m.i},{m.j} outside {n} messages")
        out[m.i], out[m.j] = out[m.j], out[m.i]
        return out
    _check(0 <= m.msg_index < n, f"message {m.msg_index} outside {n} messages")
    msg = out[m.msg_index]
    if isinstance(m, BitFlip):
        _check(0 <= m.bit_offset < 8 * len(msg), "bit offset outside message")
        b = bytearray(msg)
        b[m.bit_offset // 8] ^= 0x80 >> (m.bit_offset % 8)
        out[m.msg_index] = bytes(b)
    elif isinstance(m, Truncate):
        _check(0 <= m.new_len <= len(msg), "truncation longer than message")
        out[m.msg_index] = msg[: m.new_len]
    elif isinstance(m, Duplicate):
        out.insert(m.msg_index + 1, msg)
    elif isinstance(m, LengthCorrupt):
        _check(len(msg) >= wire.HEADER.size, "message has no length field")
        out[m.msg_index] = msg[:3] + struct.pack(">I", m.declared_len & 0xFFFFFFFF) + msg[7:]
    elif isinstance(m, RandomSplice):
        _check(0 <= m.offset <= len(msg), "splice offset outside message")
        out[m.msg_index] = msg[: m.offset] + m.data + msg[m.offset:]
    return out


def apply_mutations(dialogue, mutations) -> list[bytes]:
    out = list(dialogue)
    for m in mutations:
        out = apply_mutation(out, m)
    return out


def _sample_mutation(dialogue: list[bytes], rng: np.random.Generator) -> Mutation:
    n = len(dialogue)
    variant = int(rng.integers(0, 6))
    idx = int(rng.integers(0, n))
    non_empty = [i for i, m in enumerate(dialogue) if len(m) > 0]
    framed = [i for i, m in enumerate(dialogue) if len(m) >= wire.HEADER.size]
    if variant == 0 and non_empty:
        i = non_empty[int(rng.integers(0, len(non_empty)))]
        return BitFlip(i, int(rng.integers(0, 8 * len(dialogue[i]))))
    if variant == 1 and non_empty:
        i = non_empty[int(rng.integers(0, len(non_empty)))]
        return Truncate(i, int(rng.integers(0, len(dialogue[i]))))
    if variant == 3:
        j = int(rng.integers(0, n - 1)) if n > 1 else 0
        if n > 1 and j >= idx:
            j += 1
        return Reorder(idx, j)
    if variant == 4 and framed:
        i = framed[int(rng.integers(0, len(framed)))]
        actual = len(dialogue[i]) - wire.HEADER.size
        choices = [0, 1, max(actual - 1, 0), actual + 1, 2 * actual, 0xFFFFFFFF,
                   int(rng.integers(0, 2 * actual + 16))]
        return LengthCorrupt(i, choices[int(rng.integers(0, len(choices)))])
    if variant == 5:
        size = int(rng.integers(1, 17))
        return RandomSplice(idx, int(rng.integers(0, len(dialogue[idx]) + 1)), rng.bytes(size))
    return Duplicate(idx)


def mutate(dialogue, rng: np.random.Generator) -> tuple[list[bytes], list[Mutation]]:
    """Draw 1-8 mutations (geometric count, p = 0.5) and apply them in order."""
    current = list(dialogue)
    if not current:
        raise ValueError("cannot mutate an empty dialogue")
    count = 1
    while count < MAX_MUTATIONS and rng.random() < 0.5:
        count += 1
    mutations: list[Mutation] = []
    for _ in range(count):
        m = _sample_mutation(current, rng)
        current = apply_mutation(current, m)
        mutations.append(m)
    return current, mutations


# -- honest context ----------------------------------------------------------


@dataclass(frozen=True)
class FuzzContext:
    """Bob's raw measurement data plus Alice's ground truth for one session."""

    base_seed: int
    n_rounds: int
    depolarize_prob: float
    shared_seed: int
    alice_bases: np.ndarray
    bob_bases: np.ndarray
    clicked: np.ndarray
    bob_bits: np.ndarray
    alice_key: np.ndarray
    dialogue: tuple[bytes, ...]


@lru_cache(maxsize=32)
def build_context(base_seed: int = 0, n_rounds: int = 1024, depolarize_prob: float = 0.06) -> FuzzContext:
    """Record an honest dialogue.

    One Cascade pass is run before the first digest so the honest dialogue
    exercises the verify-and-continue path.  Sub-seeds are tried in order
    until a run needs at least two digests.
    """
    channel = ChannelParams(depolarize_prob=depolarize_prob)
    for attempt in range(64):
        seed = split(base_seed, "fuzz-context", attempt)
        rng = make_rng(seed)
        bits = rng.integers(0, 2, n_rounds, dtype=np.int8)
        bases = rng.integers(0, 2, n_rounds, dtype=np.int8)
        bob_bases = rng.integers(0, 2, n_rounds, dtype=np.int8)
        pulses = prepare_batch(bits, bases, np.ones(n_rounds), np.zeros(n_rounds, dtype=np.int8), rng)
        outcomes = measure_batch(transmit_batch(pulses, channel, rng), bob_bases, channel, rng)
        sifted = np.flatnonzero(outcomes.clicked & (bases == bob_bases))
        alice_key = bits[sifted].astype(np.uint8)
        bob_key = outcomes.bit[sifted].astype(np.uint8)
        shared = split(seed, "shared")
        hint = min(0.49, max(depolarize_prob, 0.01))
        rec = error_correct(alice_key, bob_key, hint, seed=shared, min_passes=1, first_seq=1)
        if rec.digests >= 2 or attempt == 63:
            dialogue = (wire.encode_sift(0, bases),) + tuple(rec.parity_messages)
            return FuzzContext(
                base_seed, n_rounds, depolarize_prob, shared, bases, bob_bases,
                outcomes.clicked, outcomes.bit, alice_key, dialogue,
            )
    raise AssertionError("unreachable")


# -- target ------------------------------------------------------------------


class Reject(Exception):
    """Typed abort raised by the target."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class TargetRun:
    released_key: np.ndarray | None
    reject_reason: str | None
    accepted: list[int]
    steps: int


@dataclass(frozen=True)
class ReconciliationTarget:
    """Bob's post-processing state machine, optionally with reference bugs."""

    bugs: frozenset = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "bugs", frozenset(Bug(b) for b in self.bugs))

    def has(self, bug: Bug) -> bool:
        return bug in self.bugs

    def run(self, dialogue, ctx: FuzzContext, step_budget: int = DEFAULT_STEP_BUDGET) -> TargetRun:
        run = TargetRun(None, None, [], 0)
        cascade: CascadeState | None = None
        expected_seq = 0
        digests = 0
        try:
            for index, raw in enumerate(dialogue):
                run.steps += 1
                if run.steps > step_budget:
                    raise StepBudgetExceeded("message loop")
                if run.released_key is not None:
                    raise Reject("TrailingData")
                try:
                    frame = wire.parse_frame(raw)
                except wire.FrameError:
                    raise Reject("MalformedHeader") from None
                lenient = (
                    (frame.type == wire.MsgType.SIFT and self.has(Bug.SIFT_TRUNCATION_PADDED))
                    or (frame.type == wire.MsgType.DIGEST and self.has(Bug.DIGEST_LENGTH_UNCHECKED))
                )
                if not frame.length_consistent and not lenient:
                    raise Reject("LengthMismatch")
                skip_order = frame.type == wire.MsgType.PARITY and self.has(Bug.PARITY_REORDER_ACCEPTED)
                if frame.seq != expected_seq and not skip_order:
                    raise Reject("OutOfOrder")

                if frame.type == wire.MsgType.SIFT and cascade is None:
                    cascade = self._on_sift(frame.payload, ctx, step_budget)
                elif frame.type == wire.MsgType.PARITY and cascade is not None:
                    self._on_parity(frame.payload, cascade, skip_order)
                elif frame.type == wire.MsgType.DIGEST and cascade is not None:
                    if self._on_digest(frame, cascade, ctx, digests):
                        run.released_key = np.array(cascade.key, dtype=np.uint8)
                    digests += 1
                else:
                    raise Reject("UnexpectedMessage")
                run.accepted.append(index)
                expected_seq += 1
            if run.released_key is None:
                raise Reject("Incomplete")
        except Reject as exc:
            run.reject_reason = exc.reason
        finally:
            if cascade is not None:
                run.steps += cascade.steps
        return run

    def _on_sift(self, payload: bytes, ctx: FuzzContext, step_budget: int) -> CascadeState:
        if len(payload) < wire.SIFT_HEAD.size:
            raise Reject("ShortSift")
        (n,) = wire.SIFT_HEAD.unpack_from(payload)
        if n != ctx.n_rounds:
            raise Reject("RoundCountMismatch")
        bitmap = payload[wire.SIFT_HEAD.size:]
        need = (n + 7) // 8
        if len(bitmap) != need:
            if len(bitmap) < need and self.has(Bug.SIFT_TRUNCATION_PADDED):
                bitmap = bitmap + bytes(need - len(bitmap))
            else:
                raise Reject("SiftLength")
        alice_bases = wire.unpack_bits(bitmap, n)
        sifted = np.flatnonzero(ctx.clicked & (alice_bases == ctx.bob_bases))
        return CascadeState(ctx.bob_bits[sifted].astype(int).tolist(), ctx.shared_seed, step_budget)

    def _on_parity(self, payload: bytes, cascade: CascadeState, skip_order: bool) -> None:
        head = wire.PARITY_HEAD
        if len(payload) < head.size:
            raise Reject("ShortParity")
        pass_index, block_size, n_answers = head.unpack_from(payload)
        if pass_index != len(cascade.passes) and not skip_order:
            raise Reject("PassMismatch")
        if not 1 <= block_size <= max(len(cascade.key), 1):
            raise Reject("BlockSize")
        body = payload[head.size:]
        if len(body) != (n_answers + 7) // 8:
            raise Reject("AnswerCount")
        answers = wire.unpack_bits(body, n_answers).tolist()
        cursor = iter(answers)
        used = 0

        def ask(_positions) -> int:
            nonlocal used
            try:
                bit = next(cursor)
            except StopIteration:
                raise Reject("ParityExhausted") from None
            used += 1
            return bit

        cascade.run_pass(block_size, ask)
        if used != n_answers:
            raise Reject("TrailingAnswers")

    def _on_digest(self, frame: wire.Frame, cascade: CascadeState, ctx: FuzzContext, index: int) -> bool:
        own = wire.DIGEST_BODY.pack(verification_digest(cascade.key, ctx.shared_seed, index))
        if self.has(Bug.DIGEST_LENGTH_UNCHECKED):
            k = min(frame.declared_len, len(frame.payload), len(own))
            return frame.payload[:k] == own[:k]
        if len(frame.payload) != wire.DIGEST_BODY.size:
            raise Reject("DigestLength")
        return frame.payload == own


# -- verdicts and harness ----------------------------------------------------


class VerdictKind(str, Enum):
    PASS = "Pass"
    CLEAN_REJECT = "CleanReject"
    INVARIANT_VIOLATION = "InvariantViolation"
    PANIC = "Panic"


class Invariant(str, Enum):
    KEY_MISMATCH_UNDETECTED = "KeyMismatchUndetected"
    NON_TERMINATION = "NonTermination"
    STATE_DESYNC = "StateDesync"


@dataclass(frozen=True)
class FuzzVerdict:
    kind: VerdictKind
    which: Invariant | None = None
    detail: str = ""

    @property
    def verdict_class(self) -> tuple[VerdictKind, Invariant | None]:
        return self.kind, self.which

    @property
    def is_failure(self) -> bool:
        return self.kind in (VerdictKind.INVARIANT_VIOLATION, VerdictKind.PANIC)

    def label(self) -> str:
        return self.which.value if self.which else self.kind.value


@dataclass(frozen=True)
class FuzzCase:
    case_id: int
    seed: int
    base_dialogue: tuple[bytes, ...]
    mutations: tuple = ()

    @property
    def dialogue(self) -> list[bytes]:
        return apply_mutations(self.base_dialogue, self.mutations)


def judge(target: ReconciliationTarget, dialogue, ctx: FuzzContext, step_budget: int) -> FuzzVerdict:
    try:
        run = target.run(dialogue, ctx, step_budget)
    except StepBudgetExceeded:
        return FuzzVerdict(VerdictKind.INVARIANT_VIOLATION, Invariant.NON_TERMINATION)
    except Exception as exc:  # anything untyped is a crash of the target
        return FuzzVerdict(VerdictKind.PANIC, detail=f"{type(exc).__name__}: {exc}")
    if run.released_key is not None and not np.array_equal(run.released_key, ctx.alice_key):
        return FuzzVerdict(VerdictKind.INVARIANT_VIOLATION, Invariant.KEY_MISMATCH_UNDETECTED)
    for k, index in enumerate(run.accepted):
        if not wire.strict_frame_valid(dialogue[index], k):
            return FuzzVerdict(
                VerdictKind.INVARIANT_VIOLATION, Invariant.STATE_DESYNC, f"accepted message {index} as #{k}"
            )
    if run.reject_reason is not None:
        return FuzzVerdict(VerdictKind.CLEAN_REJECT, detail=run.reject_reason)
    return FuzzVerdict(VerdictKind.PASS)


def execute_case(
    case: FuzzCase, target: ReconciliationTarget, ctx: FuzzContext, step_budget: int = DEFAULT_STEP_BUDGET
) -> FuzzVerdict:
    return judge(target, case.dialogue, ctx, step_budget)


def make_case(case_id: int, master_seed: int, ctx: FuzzContext) -> FuzzCase:
    seed = split(master_seed, case_id)
    _, mutations = mutate(ctx.dialogue, make_rng(seed))
    return FuzzCase(case_id, seed, ctx.dialogue, tuple(mutations))


def fuzz_post_processing(
    target: ReconciliationTarget,
    n_cases: int,
    master_seed: int,
    step_budget: int = DEFAULT_STEP_BUDGET,
    ctx: FuzzContext | None = None,
    stop_on_failure: bool = False,
) -> list[tuple[FuzzCase, FuzzVerdict]]:
    """Run ``n_cases`` seeded cases; case ``i`` uses ``split(master_seed, i)``."""
    if step_budget <= 0:
        raise ValueError("step_budget must be positive")
    ctx = ctx or build_context(split(master_seed, "base") & 0xFFFFFFFF)
    results = []
    for i in range(n_cases):
        case = make_case(i, master_seed, ctx)
        verdict = execute_case(case, target, ctx, step_budget)
        results.append((case, verdict))
        if stop_on_failure and verdict.is_failure:
            break
    return results


class FlakyCase(RuntimeError):
    pass


def minimize(
    case: FuzzCase, target: ReconciliationTarget, ctx: FuzzContext, step_budget: int = DEFAULT_STEP_BUDGET
) -> FuzzCase:
    """Greedy one-at-a-time mutation removal, then halving of spliced runs."""
    first = execute_case(case, target, ctx, step_budget)
    if execute_case(case, target, ctx, step_budget) != first:
        raise FlakyCase(f"case {case.case_id} does not reproduce")
    if not first.is_failure:
        raise ValueError(f"case {case.case_id} does not fail ({first.label()})")
    goal = first.verdict_class

    def still_fails(mutations) -> bool:
        try:
            dialogue = apply_mutations(case.base_dialogue, mutations)
        except MutationError:
            return False
        return judge(target, dialogue, ctx, step_budget).verdict_class == goal

    muts = list(case.mutations)
    i = 0
    while i < len(muts):
        candidate = muts[:i] + muts[i + 1:]
        if still_fails(candidate):
            muts = candidate
        else:
            i += 1
    for k, m in enumerate(muts):
        while isinstance(m, RandomSplice) and len(m.data) > 1:
            shorter = RandomSplice(m.msg_index, m.offset, m.data[: len(m.data) // 2])
            trial = muts[:k] + [shorter] + muts[k + 1:]
            if not still_fails(trial):
                break
            muts, m = trial, shorter
    return FuzzCase(case.case_id, case.seed, case.base_dialogue, tuple(muts))


# -- replay files ------------------------------------------------------------

_TAGS = {BitFlip: 0, Truncate: 1, Duplicate: 2, Reorder: 3, LengthCorrupt: 4, RandomSplice: 5}


def _encode_mutation(m: Mutation) -> bytes:
    tag = bytes([_TAGS[type(m)]])
    if isinstance(m, BitFlip):
        return tag + struct.pack(">II", m.msg_index, m.bit_offset)
    if isinstance(m, Truncate):
        return tag + struct.pack(">II", m.msg_index, m.new_len)
    if isinstance(m, Duplicate):
        return tag + struct.pack(">I", m.msg_index)
    if isinstance(m, Reorder):
        return tag + struct.pack(">II", m.i, m.j)
    if isinstance(m, LengthCorrupt):
        return tag + struct.pack(">II", m.msg_index, m.declared_len)
    return tag + struct.pack(">III", m.msg_index, m.offset, len(m.data)) + m.data


@dataclass
class ReplayFile:
    case: FuzzCase
    bugs: frozenset = field(default_factory=frozenset)
    step_budget: int = DEFAULT_STEP_BUDGET
    base_seed: int = 0
    n_rounds: int = 1024
    depolarize_prob: float = 0.06

    def context(self) -> FuzzContext:
        return build_context(self.base_seed, self.n_rounds, self.depolarize_prob)

    def target(self) -> ReconciliationTarget:
        return ReconciliationTarget(self.bugs)

    def to_bytes(self) -> bytes:
        mask = 0
        for b in self.bugs:
            mask |= _BUG_BITS[Bug(b)]
        out = bytearray(MAGIC)
        out += struct.pack(">BIQBI", VERSION, self.case.case_id, self.case.seed, mask, self.step_budget)
        out += struct.pack(">QII", self.base_seed, self.n_rounds, round(self.depolarize_prob * 1e6))
        out += struct.pack(">I", len(self.case.base_dialogue))
        for msg in self.case.base_dialogue:
            out += struct.pack(">I", len(msg)) + msg
        out += struct.pack(">I", len(self.case.mutations))
        for m in self.case.mutations:
            out += _encode_mutation(m)
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> ReplayFile:
        if data[:4] != MAGIC:
            raise ValueError("not a QRTF replay file")
        pos = 4

        def take(fmt: str):
            nonlocal pos
            s = struct.Struct(fmt)
            if pos + s.size > len(data):
                raise ValueError("truncated replay file")
            vals = s.unpack_from(data, pos)
            pos += s.size
            return vals

        def take_bytes(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(data):
                raise ValueError("truncated replay file")
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        version, case_id, seed, mask, budget = take(">BIQBI")
        if version != VERSION:
            raise ValueError(f"unsupported replay version {version}")
        base_seed, n_rounds, ppm = take(">QII")
        (n_msgs,) = take(">I")
        dialogue = tuple(take_bytes(take(">I")[0]) for _ in range(n_msgs))
        (n_muts,) = take(">I")
        muts: list[Mutation] = []
        for _ in range(n_muts):
            (tag,) = take(">B")
            if tag == 0:
                muts.append(BitFlip(*take(">II")))
            elif tag == 1:
                muts.append(Truncate(*take(">II")))
            elif tag == 2:
                muts.append(Duplicate(*take(">I")))
            elif tag == 3:
                muts.append(Reorder(*take(">II")))
            elif tag == 4:
                muts.append(LengthCorrupt(*take(">II")))
            elif tag == 5:
                idx, off, n = take(">III")
                muts.append(RandomSplice(idx, off, take_bytes(n)))
            else:
                raise ValueError(f"unknown mutation tag {tag}")
        if pos != len(data):
            raise ValueError("trailing bytes in replay file")
        bugs = frozenset(b for b, bit in _BUG_BITS.items() if mask & bit)
        return cls(FuzzCase(case_id, seed, dialogue, tuple(muts)), bugs, budget, base_seed, n_rounds, ppm / 1e6)

    def replay(self) -> FuzzVerdict:
        ctx = self.context()
        if tuple(ctx.dialogue) != tuple(self.case.base_dialogue):
            raise ValueError("replay file base dialogue does not match its regenerated context")
        return execute_case(self.case, self.target(), ctx, self.step_budget)

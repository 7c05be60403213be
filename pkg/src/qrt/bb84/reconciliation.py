"""Cascade-style block-parity reconciliation with a verification digest.

Bob runs Cascade on his key and asks Alice for parities over position sets.
Each answered parity is one disclosed bit.  The run is written so that the
parity source is a callback: :func:`error_correct` answers from Alice's key
and records the answers as wire messages, while the fuzz target answers from
a recorded (and possibly mutated) message stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..qubit_core import InvalidParameter
from ..rng import make_rng, split
from . import wire

DIGEST_BITS = 64
DIGEST_PRIME = (1 << 64) - 59
FALLBACK_QBER_HINT = 0.02

Ask = Callable[[Sequence[int]], int]


class ReconciliationFailed(Exception):
    """Digests still disagree after the maximum number of passes."""

    def __init__(self, leaked_bits: int, parity_messages: list[bytes], passes: int):
        super().__init__(f"keys still differ after {passes} passes")
        self.leaked_bits = leaked_bits
        self.parity_messages = parity_messages
        self.passes = passes


class StepBudgetExceeded(RuntimeError):
    pass


def initial_block_size(qber_hint: float, n: int) -> int:
    if n <= 0:
        return 1
    if qber_hint <= 0 or qber_hint * n <= 0.73:
        return n
    return int(min(n, max(4, round(0.73 / qber_hint))))


def pass_block_size(k1: int, pass_index: int, n: int) -> int:
    """Doubling block sizes.  Later passes stop at ``n // 2``: a whole-key
    block can never expose an error pair, so it would add leakage for nothing."""
    if pass_index == 0:
        return int(max(1, min(n, k1)))
    return int(max(1, min(n // 2, k1 << min(pass_index, 40))))


def pass_order(seed: int, pass_index: int, n: int) -> list[int]:
    if pass_index == 0:
        return list(range(n))
    return make_rng(seed, "cascade", pass_index).permutation(n).tolist()


def verification_digest(key: Sequence[int], seed: int, index: int) -> int:
    """64-bit polynomial hash of a bit string, evaluated at a seeded point.

    The key is cut into 32-bit words (with the bit length appended) and the
    word sequence is read as polynomial coefficients mod ``2**64 - 59``.  Two
    different keys of ``L`` words collide with probability at most
    ``(L + 1) / 2**64`` over the choice of point.
    """
    bits = np.asarray(key, dtype=np.uint8)
    padded = np.concatenate([bits, np.zeros((-len(bits)) % 32, dtype=np.uint8)])
    words = np.packbits(padded).view(">u4").tolist() if len(padded) else []
    words.append(len(bits))
    point = 1 + split(seed, "digest", index) % (DIGEST_PRIME - 1)
    acc = 0
    for w in words:
        acc = (acc * point + int(w)) % DIGEST_PRIME
    return (acc * point) % DIGEST_PRIME


@dataclass
class _Pass:
    blocks: list[list[int]]
    block_of: list[int]
    alice_parity: list[int]


@dataclass
class CascadeState:
    """Bob's side of Cascade.  ``key`` is corrected in place."""

    key: list[int]
    seed: int
    step_budget: int | None = None
    passes: list[_Pass] = field(default_factory=list)
    asks: int = 0
    steps: int = 0

    def _tick(self) -> None:
        self.steps += 1
        if self.step_budget is not None and self.steps > self.step_budget:
            raise StepBudgetExceeded(f"more than {self.step_budget} steps")

    def _parity(self, positions: Sequence[int]) -> int:
        key = self.key
        return sum(key[i] for i in positions) & 1

    def _ask(self, ask: Ask, positions: Sequence[int]) -> int:
        self._tick()
        self.asks += 1
        return int(ask(positions)) & 1

    def run_pass(self, block_size: int, ask: Ask) -> None:
        n = len(self.key)
        if not 1 <= block_size <= max(n, 1):
            raise InvalidParameter(f"block size {block_size} outside [1, {n}]")
        order = pass_order(self.seed, len(self.passes), n)
        blocks = [order[s:s + block_size] for s in range(0, n, block_size)]
        block_of = [0] * n
        for b, blk in enumerate(blocks):
            for pos in blk:
                block_of[pos] = b
        alice = [self._ask(ask, blk) for blk in blocks]
        self.passes.append(_Pass(blocks, block_of, alice))
        current = len(self.passes) - 1
        for b, blk in enumerate(blocks):
            if self._parity(blk) != alice[b]:
                self._correct(current, b, ask)

    def _correct(self, pass_index: int, block: int, ask: Ask) -> None:
        pending = [(pass_index, block)]
        while pending:
            self._tick()
            p, b = pending.pop()
            info = self.passes[p]
            blk = info.blocks[b]
            if self._parity(blk) == info.alice_parity[b]:
                continue
            pos = self._bisect(blk, info.alice_parity[b], ask)
            self.key[pos] ^= 1
            # the flip changes the parity of the block holding pos in every
            # other pass; those blocks now disagree and must be revisited
            for q, other in enumerate(self.passes):
                if q != p:
                    pending.append((q, other.block_of[pos]))

    def _bisect(self, blk: list[int], alice_parity: int, ask: Ask) -> int:
        while len(blk) > 1:
            half = blk[: len(blk) // 2]
            a = self._ask(ask, half)
            if self._parity(half) != a:
                blk, alice_parity = half, a
            else:
                blk, alice_parity = blk[len(blk) // 2:], alice_parity ^ a
        return blk[0]


@dataclass
class ReconciliationResult:
    shared_key: np.ndarray
    leaked_bits: int
    parity_messages: list[bytes]
    passes: int
    digests: int


def error_correct(
    alice_key,
    bob_key,
    qber_hint: float,
    seed: int = 0,
    min_passes: int = 2,
    max_passes: int = 16,
    first_seq: int = 1,
) -> ReconciliationResult:
    """Reconcile Bob's key to Alice's.

    With ``qber_hint == 0`` no parity pass is run up front and the first
    digest comparison decides whether any is needed; identical keys then cost
    exactly one digest.  Otherwise ``min_passes`` Cascade passes run, then
    digests are compared and one further pass is run per mismatch until
    ``max_passes``.  Raises :class:`ReconciliationFailed` when the digests
    never agree.
    """
    alice = np.asarray(alice_key, dtype=np.uint8)
    bob = np.asarray(bob_key, dtype=np.uint8)
    if alice.shape != bob.shape:
        raise InvalidParameter("alice and bob keys must have equal length")
    if not 0.0 <= qber_hint < 0.5:
        raise InvalidParameter("qber_hint must be in [0, 0.5)")
    n = len(alice)
    alice_list = alice.tolist()
    state = CascadeState(bob.tolist(), seed)
    messages: list[bytes] = []
    seq = first_seq
    k1 = initial_block_size(qber_hint if qber_hint > 0 else FALLBACK_QBER_HINT, n)

    def do_pass() -> None:
        nonlocal seq
        answers: list[int] = []

        def ask(positions: Sequence[int]) -> int:
            bit = sum(alice_list[i] for i in positions) & 1
            answers.append(bit)
            return bit

        p = len(state.passes)
        size = pass_block_size(k1, p, n)
        state.run_pass(size, ask)
        messages.append(wire.encode_parity(seq, p, size, answers))
        seq += 1

    if n and qber_hint > 0:
        for _ in range(min_passes):
            do_pass()
    digests = 0
    while True:
        a_digest = verification_digest(alice_list, seed, digests)
        b_digest = verification_digest(state.key, seed, digests)
        messages.append(wire.encode_digest(seq, a_digest))
        seq += 1
        digests += 1
        leaked = state.asks + DIGEST_BITS * digests
        if a_digest == b_digest:
            return ReconciliationResult(
                np.array(state.key, dtype=np.uint8), leaked, messages, len(state.passes), digests
            )
        if len(state.passes) >= max_passes or n == 0:
            raise ReconciliationFailed(leaked, messages, len(state.passes))
        do_pass()


def residual_errors(a, b) -> int:
    return int(np.count_nonzero(np.asarray(a) != np.asarray(b)))


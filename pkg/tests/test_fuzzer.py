from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrt import fuzzer as fz
from qrt.bb84 import wire
from qrt.rng import make_rng

CLEAN = fz.ReconciliationTarget()


@pytest.fixture(scope="module")
def ctx():
    return fz.build_context(0)


class TestMutations:
    msgs = [b"\x01\x02\x03", b"\xff", b""]

    def test_bit_flip_is_msb_first(self):
        assert fz.apply_mutation(self.msgs, fz.BitFlip(0, 7))[0] == b"\x00\x02\x03"

    def test_truncate(self):
        assert fz.apply_mutation(self.msgs, fz.Truncate(0, 1))[0] == b"\x01"

    def test_duplicate_and_reorder(self):
        assert fz.apply_mutation(self.msgs, fz.Duplicate(1)) == [b"\x01\x02\x03", b"\xff", b"\xff", b""]
        assert fz.apply_mutation(self.msgs, fz.Reorder(0, 2)) == [b"", b"\xff", b"\x01\x02\x03"]

    def test_length_corrupt_rewrites_header(self):
        raw = wire.encode_digest(0, 7)
        out = fz.apply_mutation([raw], fz.LengthCorrupt(0, 3))[0]
        assert wire.parse_frame(out).declared_len == 3 and out[7:] == raw[7:]

    def test_splice(self):
        assert fz.apply_mutation(self.msgs, fz.RandomSplice(1, 1, b"ab"))[1] == b"\xffab"

    def test_input_untouched(self):
        before = list(self.msgs)
        fz.apply_mutation(self.msgs, fz.Duplicate(0))
        assert self.msgs == before

    @pytest.mark.parametrize("m", [fz.BitFlip(5, 0), fz.BitFlip(0, 24), fz.Truncate(0, 4),
                                   fz.Reorder(0, 3), fz.LengthCorrupt(1, 0), fz.RandomSplice(0, 9, b"x")])
    def test_out_of_range(self, m):
        with pytest.raises(fz.MutationError):
            fz.apply_mutation(self.msgs, m)

    @settings(max_examples=100)
    @given(st.integers(0, 2**63))
    def test_mutate_count_and_replay(self, seed):
        dialogue = [wire.encode_digest(i, i) for i in range(4)]
        out, muts = fz.mutate(dialogue, make_rng(seed))
        assert 1 <= len(muts) <= fz.MAX_MUTATIONS
        assert fz.apply_mutations(dialogue, muts) == out


class TestContext:
    def test_honest_dialogue_shape(self, ctx):
        frames = [wire.parse_frame(m) for m in ctx.dialogue]
        assert frames[0].type == wire.MsgType.SIFT
        assert [f.seq for f in frames] == list(range(len(frames)))
        assert sum(f.type == wire.MsgType.DIGEST for f in frames) >= 2
        assert all(wire.strict_frame_valid(m, i) for i, m in enumerate(ctx.dialogue))

    def test_cached(self, ctx):
        assert fz.build_context(0) is ctx

    @pytest.mark.parametrize("bugs", [(), (fz.Bug.DIGEST_LENGTH_UNCHECKED,), (fz.Bug.PARITY_REORDER_ACCEPTED,),
                                      (fz.Bug.SIFT_TRUNCATION_PADDED,), tuple(fz.Bug)])
    def test_honest_dialogue_passes(self, ctx, bugs):
        target = fz.ReconciliationTarget(frozenset(bugs))
        run = target.run(ctx.dialogue, ctx)
        assert run.reject_reason is None
        assert np.array_equal(run.released_key, ctx.alice_key)
        assert fz.judge(target, ctx.dialogue, ctx, fz.DEFAULT_STEP_BUDGET).kind is fz.VerdictKind.PASS


class TestTarget:
    def test_clean_rejects_are_typed(self, ctx):
        d = list(ctx.dialogue)
        assert CLEAN.run(d[:-1], ctx).reject_reason == "Incomplete"
        assert CLEAN.run(d + [d[-1]], ctx).reject_reason == "TrailingData"
        assert CLEAN.run([d[1]] + d[1:], ctx).reject_reason == "OutOfOrder"
        assert CLEAN.run([b"\x01"] + d[1:], ctx).reject_reason == "MalformedHeader"

    def test_truncated_digest(self, ctx):
        d = list(ctx.dialogue)
        i = max(k for k, m in enumerate(d) if wire.parse_frame(m).type == wire.MsgType.DIGEST)
        cut = fz.apply_mutations(d, [fz.Truncate(i, 10), fz.LengthCorrupt(i, 3)])
        assert CLEAN.run(cut, ctx).reject_reason == "DigestLength"

    def test_step_budget_is_non_termination(self, ctx):
        v = fz.judge(CLEAN, ctx.dialogue, ctx, step_budget=5)
        assert v.verdict_class == (fz.VerdictKind.INVARIANT_VIOLATION, fz.Invariant.NON_TERMINATION)

    def test_panic_on_untyped_exception(self, ctx):
        class Broken(fz.ReconciliationTarget):
            def run(self, dialogue, ctx, step_budget=0):
                raise KeyError("boom")

        v = fz.judge(Broken(), ctx.dialogue, ctx, 10)
        assert v.kind is fz.VerdictKind.PANIC and "KeyError" in v.detail and v.is_failure

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**63))
    def test_clean_target_never_fails(self, seed):
        case = fz.make_case(0, seed, fz.build_context(0))
        assert not fz.execute_case(case, CLEAN, fz.build_context(0)).is_failure


class TestHarness:
    def test_case_seed_derivation_and_determinism(self, ctx):
        a = fz.fuzz_post_processing(CLEAN, 50, 3, ctx=ctx)
        b = fz.fuzz_post_processing(CLEAN, 50, 3, ctx=ctx)
        assert a == b
        assert fz.make_case(17, 3, ctx) == a[17][0]

    @pytest.mark.parametrize("bug", list(fz.Bug))
    def test_each_bug_is_found(self, ctx, bug):
        target = fz.ReconciliationTarget({bug})
        res = fz.fuzz_post_processing(target, 3000, 7, ctx=ctx, stop_on_failure=True)
        assert res[-1][1].is_failure

    def test_minimize_keeps_verdict(self, ctx):
        target = fz.ReconciliationTarget({fz.Bug.PARITY_REORDER_ACCEPTED})
        case, v = fz.fuzz_post_processing(target, 3000, 7, ctx=ctx, stop_on_failure=True)[-1]
        small = fz.minimize(case, target, ctx)
        assert len(small.mutations) <= len(case.mutations)
        assert fz.execute_case(small, target, ctx).verdict_class == v.verdict_class
        for k in range(len(small.mutations)):
            fewer = fz.FuzzCase(0, 0, small.base_dialogue, small.mutations[:k] + small.mutations[k + 1:])
            try:
                still = fz.execute_case(fewer, target, ctx).verdict_class == v.verdict_class
            except fz.MutationError:
                still = False
            assert not still

    def test_minimize_rejects_passing_case(self, ctx):
        with pytest.raises(ValueError):
            fz.minimize(fz.FuzzCase(0, 0, ctx.dialogue, ()), CLEAN, ctx)


class TestReplayFile:
    def _failing(self, ctx):
        target = fz.ReconciliationTarget({fz.Bug.DIGEST_LENGTH_UNCHECKED})
        case, v = fz.fuzz_post_processing(target, 3000, 7, ctx=ctx, stop_on_failure=True)[-1]
        return fz.ReplayFile(case, target.bugs), v

    def test_round_trip_is_bit_identical(self, ctx):
        rf, v = self._failing(ctx)
        raw = rf.to_bytes()
        back = fz.ReplayFile.from_bytes(raw)
        assert back.to_bytes() == raw
        assert back.case == rf.case and back.bugs == rf.bugs
        assert back.replay() == v

    def test_header(self, ctx):
        raw = self._failing(ctx)[0].to_bytes()
        assert raw[:5] == b"QRTF\x01"

    @pytest.mark.parametrize("mangle", [lambda r: b"XXXX" + r[4:], lambda r: r[:-1], lambda r: r + b"\x00",
                                        lambda r: r[:4] + b"\x09" + r[5:]])
    def test_corrupt_files_rejected(self, ctx, mangle):
        raw = self._failing(ctx)[0].to_bytes()
        with pytest.raises(ValueError):
            fz.ReplayFile.from_bytes(mangle(raw))

    def test_mismatched_context_rejected(self, ctx):
        rf, _ = self._failing(ctx)
        rf.base_seed = 99
        with pytest.raises(ValueError):
            rf.replay()

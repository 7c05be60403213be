from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrt import adversary as adv
from qrt.bb84.session import SessionConfig, run_session
from qrt.qubit_core import ChannelParams, InvalidParameter, OutcomeBatch, prepare_batch
from qrt.rng import make_rng


def enumerated_intercept_qber(fraction: Fraction) -> tuple[Fraction, Fraction]:
    """Exact sifted QBER and Eve accuracy by enumerating all 16 basis/bit cases.

    Cases are (alice basis, alice bit, eve basis, bob basis) with Bob's basis
    equal to Alice's after sifting; every conjugate measurement splits 50/50.
    """
    half = Fraction(1, 2)
    errors = Fraction(0)
    eve_right = Fraction(0)
    total = Fraction(0)
    for a_basis, bit, e_basis, b_basis in itertools.product((0, 1), repeat=4):
        if a_basis != b_basis:
            continue
        w = Fraction(1, 16) * 2  # conditional on sifting (half the cases survive)
        total += w
        if e_basis == a_basis:
            eve_bit_dist = {bit: Fraction(1)}
        else:
            eve_bit_dist = {0: half, 1: half}
        for eve_bit, p_eve in eve_bit_dist.items():
            # Bob measures Eve's resent state
            p_bob_wrong = Fraction(0) if e_basis == b_basis and eve_bit == bit else (
                Fraction(1) if e_basis == b_basis else half)
            errors += w * p_eve * (fraction * p_bob_wrong)
            eve_right += w * p_eve * (fraction if eve_bit == bit else 0)
    return errors / total, eve_right / (total * fraction) if fraction else Fraction(0)


def test_enumeration_oracle_gives_f_over_four():
    for f in (Fraction(1), Fraction(1, 2), Fraction(1, 4), Fraction(0)):
        qber, _ = enumerated_intercept_qber(f)
        assert qber == f / 4
    assert enumerated_intercept_qber(Fraction(1))[1] == Fraction(3, 4)


def _ir_session(fraction: float, seed: int = 1):
    cfg = SessionConfig(n_rounds=100_000, mu_signal=1.0)
    return run_session(cfg, ChannelParams.ideal(), adv.InterceptResend(fraction), seed=seed)[0]


def test_intercept_resend_matches_enumeration():
    t = _ir_session(1.0)
    s = t.sifted_indices
    qber = np.mean(t.alice_bits[s] != t.bob_bits[s])
    n = len(s)
    assert abs(qber - 0.25) < 4 * math.sqrt(0.25 * 0.75 / n)
    known = t.eve.known_bits(t.alice_bits)[s]
    touched = t.eve.touched[s]
    acc = known.sum() / touched.sum()
    assert abs(acc - 0.75) < 4 * math.sqrt(0.75 * 0.25 / touched.sum())


def test_intercept_resend_fixed_basis():
    rng = make_rng(0)
    n = 50_000
    b = prepare_batch(rng.integers(0, 2, n), rng.integers(0, 2, n), np.ones(n), np.zeros(n, dtype=np.int8), rng)
    out, rec = adv.intercept_resend_batch(b, 1.0, adv.BasisPolicy.FIXED_RECTILINEAR, make_rng(1))
    assert np.all(rec.eve_basis[rec.touched] == 0)
    assert np.all(out.basis[rec.touched] == 0)
    assert np.all(out.photon_count[rec.touched] == 1)


def test_empty_pulses_are_not_touched():
    rng = make_rng(0)
    n = 1000
    b = prepare_batch(np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n, dtype=np.int8), rng)
    _, rec = adv.intercept_resend_batch(b, 1.0, adv.BasisPolicy.RANDOM, make_rng(1))
    assert not rec.touched.any()


class TestPns:
    def _batch(self, mu=0.5, n=100_000):
        rng = make_rng(2)
        return prepare_batch(rng.integers(0, 2, n), rng.integers(0, 2, n), np.full(n, mu),
                             np.zeros(n, dtype=np.int8), rng)

    def test_steals_exactly_one_photon_and_knows_the_bit(self):
        b = self._batch()
        out, rec = adv.pns_batch(b, 0.0, make_rng(3))
        multi = b.photon_count >= 2
        assert np.array_equal(out.photon_count[multi], b.photon_count[multi] - 1)
        assert np.array_equal(rec.eve_bit[multi], b.bit[multi])
        assert np.all(rec.photons_stolen == multi)
        singles = b.photon_count == 1
        assert np.all(out.photon_count[singles] == 1)

    def test_blocks_singles_at_rate(self):
        b = self._batch()
        out, rec = adv.pns_batch(b, 0.4, make_rng(4))
        singles = b.photon_count == 1
        rate = np.mean(out.photon_count[singles] == 0)
        assert abs(rate - 0.4) < 4 * math.sqrt(0.24 / singles.sum())
        assert np.all(rec.eve_bit[singles] == -1)

    @pytest.mark.parametrize("t", [0.2, 0.3, 0.6])
    def test_compensating_block_prob_preserves_arrival(self, t):
        mu = 0.5
        b = adv.compensating_block_prob(mu, ChannelParams(transmittance=t))
        p1 = mu * math.exp(-mu)
        p_multi = 1 - math.exp(-mu) * (1 + mu)
        assert p_multi + p1 * (1 - b) == pytest.approx(1 - math.exp(-t * mu), abs=1e-12)

    def test_compensation_clamps(self):
        # lossless link: blocking nothing already matches; very lossy: multi-photon arrivals alone exceed it
        assert adv.compensating_block_prob(0.5, ChannelParams(transmittance=1.0)) == 0.0
        assert adv.compensating_block_prob(0.5, ChannelParams(transmittance=0.05)) == 1.0


class TestFaults:
    def test_detector_blind_only_removes_clicks(self):
        rng = make_rng(0)
        n = 10_000
        clicked = rng.random(n) < 0.3
        ob = OutcomeBatch(clicked, rng.integers(0, 2, n).astype(np.int8) * clicked, rng.integers(0, 2, n).astype(np.int8))
        out, log = adv.fault_inject(ob, adv.Fault.DETECTOR_BLIND, 0.5, make_rng(1))
        assert not np.any(out.clicked & ~clicked)
        assert np.array_equal(log.suppressed, clicked & ~out.clicked)
        assert abs(log.suppressed.sum() / clicked.sum() - 0.5) < 0.05

    def test_basis_flip_logged(self):
        ob = OutcomeBatch(np.ones(100, bool), np.zeros(100, np.int8), np.zeros(100, np.int8))
        out, log = adv.fault_inject(ob, adv.Fault.BASIS_FLIP, 1.0, make_rng(1))
        assert log.basis_flipped.all() and np.all(out.measured_basis == 1)

    def test_channel_mapping(self):
        ch = ChannelParams(detector_efficiency=0.8, depolarize_prob=0.1)
        blind = adv.fault_inject(ch, adv.Fault.DETECTOR_BLIND, 0.5)
        assert blind.detector_efficiency == pytest.approx(0.4)
        flip = adv.fault_inject(ch, adv.Fault.BASIS_FLIP, 0.2)
        # independent flips compose: p(1-q) + q(1-p) with q = rate/2
        assert flip.depolarize_prob == pytest.approx(0.1 * 0.9 + 0.1 * 0.9)
        with pytest.raises(InvalidParameter):
            adv.fault_inject(ch, adv.Fault.DETECTOR_BLIND, 1.0)

    def test_outcome_fault_needs_rng(self):
        ob = OutcomeBatch(np.ones(1, bool), np.zeros(1, np.int8), np.zeros(1, np.int8))
        with pytest.raises(InvalidParameter):
            adv.fault_inject(ob, adv.Fault.BASIS_FLIP, 0.5)


class TestStrategies:
    @pytest.mark.parametrize("bad", [
        lambda: adv.InterceptResend(1.5), lambda: adv.PhotonNumberSplit(-0.1),
        lambda: adv.FaultInject(rate=2.0), lambda: adv.Adaptive(()),
        lambda: adv.Adaptive((adv.Adaptive((adv.NoAdversary(),)),)),
        lambda: adv.Adaptive((adv.NoAdversary(),), epsilon=0.0),
    ])
    def test_invalid(self, bad):
        with pytest.raises(InvalidParameter):
            bad()

    def test_unknown_kind_and_keys(self):
        with pytest.raises(InvalidParameter):
            adv.strategy_from_dict({"kind": "teleport"})
        with pytest.raises(InvalidParameter):
            adv.strategy_from_dict({"kind": "pns", "fraction": 0.1})

    @given(st.sampled_from([
        adv.NoAdversary(), adv.InterceptResend(0.3, "fixed_rectilinear"), adv.PhotonNumberSplit(0.7),
        adv.FaultInject("basis_flip", 0.2),
        adv.Adaptive((adv.InterceptResend(1.0), adv.NoAdversary()), 0.2, (1.0, 2.0)),
    ]))
    def test_dict_round_trip(self, s):
        assert adv.strategy_from_dict(adv.strategy_to_dict(s)) == s

    def test_adaptive_rejected_by_session(self):
        with pytest.raises(InvalidParameter):
            run_session(SessionConfig(n_rounds=10), ChannelParams(), adv.Adaptive((adv.NoAdversary(),)))


class TestBandit:
    def test_empty_history_is_uniform(self):
        rng = make_rng(0)
        picks = [adv.adapt_strategy([], 4, 0.1, rng) for _ in range(4000)]
        counts = np.bincount(picks, minlength=4)
        assert counts.min() > 850

    def test_exploits_best_mean_lowest_index_on_ties(self):
        history = [(0, 1.0), (1, 1.0), (2, 0.2)]
        rng = make_rng(1)
        picks = [adv.adapt_strategy(history, 3, 0.01, rng) for _ in range(1000)]
        assert np.bincount(picks, minlength=3)[0] > 980

    def test_unpulled_arm_mean_is_zero(self):
        rng = make_rng(2)
        picks = [adv.adapt_strategy([(0, -1.0)], 2, 0.01, rng) for _ in range(500)]
        assert np.bincount(picks, minlength=2)[1] > 480

    def test_reward(self):
        assert adv.session_reward(0.75, False) == 0.75
        assert adv.session_reward(0.75, True, (2.0, 1.0)) == 0.5

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.integers(0, 3), st.floats(-5, 5)), max_size=30), st.integers(0, 2**32))
    def test_choice_in_range(self, history, seed):
        assert 0 <= adv.adapt_strategy(history, 4, 0.3, make_rng(seed)) < 4

    def test_invalid(self):
        with pytest.raises(InvalidParameter):
            adv.adapt_strategy([], 0, 0.1, make_rng(0))
        with pytest.raises(InvalidParameter):
            adv.adapt_strategy([(0, math.nan)], 1, 0.1, make_rng(0))

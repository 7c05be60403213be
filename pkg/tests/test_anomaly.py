from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrt import adversary as adv
from qrt import anomaly as an
from qrt.bb84.session import SessionConfig, run_session
from qrt.qubit_core import ChannelParams
from qrt.rng import make_rng, split

CH = ChannelParams(transmittance=0.5, depolarize_prob=0.02, dark_count_prob=1e-4,
                   detector_efficiency=0.9, timing_jitter=0.1)


def _vectors(n, strategy=None, tag="b", rounds=4000):
    cfg = SessionConfig(n_rounds=rounds)
    return [an.FeatureVector.from_telemetry(run_session(cfg, CH, strategy, seed=split(5, tag, i))[1]) for i in range(n)]


@pytest.fixture(scope="module")
def benign():
    return _vectors(100)


@pytest.fixture(scope="module")
def held_out():
    return _vectors(100, tag="h")


@pytest.fixture(scope="module")
def forest(benign):
    return an.fit(benign, "forest", make_rng(1))


@pytest.fixture(scope="module")
def pca(benign):
    return an.fit(benign, "pca", make_rng(1))


def test_harmonic_and_c_factor_exact():
    h = sum(Fraction(1, k) for k in range(1, 256))
    assert an.harmonic(255) == pytest.approx(float(h), rel=1e-14)
    assert an.c_factor(256) == pytest.approx(float(2 * h - Fraction(2 * 255, 256)), rel=1e-14)
    assert an.c_factor(2) == 1.0 and an.c_factor(1) == 0.0
    # asymptotic branch agrees with the exact sum where they meet
    exact = float(sum(Fraction(1, k) for k in range(1, 4098)))
    assert an.harmonic(4097) == pytest.approx(exact, rel=1e-9)


def test_feature_vector_from_telemetry(benign):
    _, tel = run_session(SessionConfig(n_rounds=2000), CH, seed=1)
    v = an.FeatureVector.from_telemetry(tel).as_dict()
    assert v["qber"] == tel.qber_estimate and v["gain_decoy"] == 0.0
    assert v["basis_click_asymmetry"] == abs(tel.per_basis_click_rate[0] - tel.per_basis_click_rate[1])
    with pytest.raises(ValueError):
        an.FeatureVector(np.zeros(3))


def test_tree_isolates_a_point_at_depth_one():
    X = np.array([[0.0] * 8, [1.0] * 8])
    tree = an._grow_tree(X, 5, make_rng(0))
    assert tree.path_lengths(X).tolist() == [1.0, 1.0]


def test_insufficient_baseline(benign):
    with pytest.raises(an.InsufficientBaseline):
        an.fit(benign[:63], "forest", make_rng(0))
    with pytest.raises(ValueError):
        an.fit(benign, "forest", make_rng(0), {"depth": 3})


class TestForest:
    def test_scores_in_unit_interval(self, forest, benign):
        s = an.score_many(forest, benign)
        assert np.all((s > 0) & (s < 1))

    def test_far_point_scores_high(self, forest, benign):
        X = np.stack([v.values for v in benign])
        far = an.FeatureVector(X.max(axis=0) + 10 * X.std(axis=0) + 1.0)
        assert an.score(forest, far) > 0.7
        assert an.score(forest, an.FeatureVector(np.median(X, axis=0))) < 0.5

    def test_intercept_resend_separated(self, forest, held_out):
        thr = an.calibrate_threshold(forest, held_out)
        attacks = _vectors(20, adv.InterceptResend(1.0), tag="a")
        assert all(isinstance(an.detect(forest, v, thr), an.Anomalous) for v in attacks)

    def test_deterministic_fit(self, benign, forest):
        again = an.fit(benign, "forest", make_rng(1))
        assert an.model_digest(again) == an.model_digest(forest)


class TestPca:
    def test_line_data_has_zero_error_on_line(self):
        t = np.linspace(-1, 1, 100)
        X = np.outer(t, np.arange(1, 9))
        model = an.fit(X, "pca", make_rng(0), {"variance_retained": 0.99})
        assert len(model.components) == 1
        assert model.reconstruction_error(X).max() < 1e-20
        off = X[0].copy()
        off[0] += 1.0
        assert an.score(model, off) > 0.9

    def test_scores_in_unit_interval(self, pca, benign):
        s = an.score_many(pca, benign)
        assert np.all((s >= 0) & (s < 1))


@pytest.mark.parametrize("fpr", [0.01, 0.05, 0.1, 0.5])
def test_calibration_bound(forest, held_out, fpr):
    thr = an.calibrate_threshold(forest, held_out, fpr)
    scores = an.score_many(forest, held_out)
    allowed = math.floor(fpr * len(held_out))
    assert int(np.sum(scores >= thr)) <= allowed
    # tight: the largest held-out score below the threshold would push alerts over the limit
    below = scores[scores < thr].max()
    assert int(np.sum(scores >= below)) > allowed


class TestEvasion:
    @pytest.mark.parametrize("kind", ["forest", "pca"])
    def test_never_worse_and_stays_in_box(self, request, kind):
        model = request.getfixturevalue(kind)
        v = _vectors(1, adv.InterceptResend(1.0), tag="e")[0]
        budget = np.full(8, 0.01)
        res = an.evade(model, v, budget, iters=20, rng=make_rng(0))
        assert res.score <= res.initial_score
        assert np.all(np.abs(res.vector.values - v.values) <= budget + 1e-15)

    def test_zero_budget_is_identity(self, forest):
        v = _vectors(1, adv.InterceptResend(1.0), tag="e")[0]
        res = an.evade(forest, v, 0.0)
        assert np.array_equal(res.vector.values, v.values) and res.score == res.initial_score

    def test_negative_budget(self, forest, benign):
        with pytest.raises(ValueError):
            an.evade(forest, benign[0], -1.0)

    def test_unlimited_budget_drops_below_threshold(self, pca, held_out):
        thr = an.calibrate_threshold(pca, held_out)
        attacks = _vectors(5, adv.InterceptResend(1.0), tag="u")
        assert an.attack_success_rate(pca, attacks, math.inf, thr) == 1.0


class TestBlob:
    @pytest.mark.parametrize("kind", ["forest", "pca"])
    def test_round_trip(self, request, kind, benign):
        model = request.getfixturevalue(kind)
        blob = an.to_blob(model)
        back = an.from_blob(blob)
        assert an.to_blob(back) == blob
        assert np.array_equal(an.score_many(back, benign), an.score_many(model, benign))

    def test_corrupt(self, pca):
        blob = an.to_blob(pca)
        for bad in (b"XXXX" + blob[4:], blob[:-3], blob + b"\x00", blob[:4] + b"\x07" + blob[5:]):
            with pytest.raises(ValueError):
                an.from_blob(bad)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.0, 1.0))
def test_detect_is_threshold_on_score(seed, thr):
    rng = make_rng(seed)
    X = rng.normal(size=(64, 8))
    model = an.fit(X, "pca", rng)
    v = an.FeatureVector(rng.normal(size=8) * 3)
    if thr == 0.0:
        with pytest.raises(ValueError):
            an.detect(model, v, thr)
        return
    verdict = an.detect(model, v, thr)
    assert isinstance(verdict, an.Anomalous) == (an.score(model, v) >= thr)

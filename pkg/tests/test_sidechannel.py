from __future__ import annotations

import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrt import sidechannel as sc
from qrt.rng import make_rng


def _key(bits=128, seed=0):
    return make_rng(seed, "key").integers(0, 2, bits, dtype=np.uint8)


def test_snr_definition():
    assert sc.LeakModel(2.0, 1.0).snr == 4.0
    assert sc.LeakModel.from_snr(5.0).snr == pytest.approx(5.0)
    assert sc.LeakModel(0.0, 0.0).snr == 0.0
    assert math.isinf(sc.LeakModel(1.0, 0.0).snr)
    assert sc.LeakModel(3.0, 2.0, 8).mitigated() == sc.LeakModel(0.0, 2.0, 8)


@pytest.mark.parametrize("kw", [{"leak_weight": math.nan}, {"noise_sigma": -1}, {"samples_per_bit": 0}])
def test_invalid_model(kw):
    with pytest.raises(ValueError):
        sc.LeakModel(**kw)


def test_noiseless_trace_is_the_leak():
    t = sc.emit_trace([1, 0, 1], sc.LeakModel(2.0, 0.0, 2), make_rng(0))
    assert t.samples.tolist() == [2, 2, 0, 0, 2, 2]


def test_traces_reproducible_per_stream():
    m = sc.LeakModel()
    a = sc.emit_traces(_key(), m, 5, seed=3)
    b = sc.emit_traces(_key(), m, 7, seed=3)
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))
    assert [t.trace_id for t in a] == list(range(5))


def test_two_means_threshold_splits_clusters():
    v = np.r_[np.full(10, 1.0), np.full(30, 5.0)]
    assert sc._two_means_threshold(v) == pytest.approx(3.0)


def test_strong_leak_recovers_key():
    key = _key()
    bits, conf = sc.dpa_recover(sc.emit_traces(key, sc.LeakModel.from_snr(5.0), 200, 1), 4)
    assert np.array_equal(bits, key)
    assert conf.min() >= 0 and conf.max() == pytest.approx(1.0)


def test_zero_leak_is_chance():
    key = _key(512)
    acc = sc.run_attack(key, sc.LeakModel(0.0, 1.0), 200, 2)
    assert abs(acc - 0.5) < 4 * math.sqrt(0.25 / 512)


def test_window_means_validation():
    m = sc.LeakModel()
    a = sc.emit_trace([1, 0], m, make_rng(0))
    b = sc.emit_trace([1, 0, 1], m, make_rng(0))
    with pytest.raises(sc.InvalidTraces):
        sc.window_means([a, b], 4)
    with pytest.raises(sc.InvalidTraces):
        sc.window_means([], 4)
    with pytest.raises(sc.InvalidTraces):
        sc.window_means([a], 3)
    with pytest.raises(sc.InvalidTraces):
        sc.emit_trace([], m, make_rng(0))


def test_traces_csv():
    rows = list(csv.reader(io.StringIO(sc.traces_csv(sc.emit_traces([1, 0], sc.LeakModel(), 2, 0)))))
    assert rows[0] == ["trace_id", "sample_index", "value"]
    assert len(rows) == 1 + 2 * 8


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=64), st.integers(0, 2**32))
def test_recovery_shapes_and_bounds(key, seed):
    bits, conf = sc.dpa_recover(sc.emit_traces(key, sc.LeakModel(), 3, seed), 4)
    assert bits.shape == conf.shape == (len(key),)
    assert np.all((conf >= 0) & (conf <= 1))
    assert 0.0 <= sc.recovery_accuracy(key, bits) <= 1.0

from __future__ import annotations

import csv
import io
import math

import numpy as np
import pytest

from qrt import adversary as adv
from qrt.bb84.session import (
    TELEMETRY_COLUMNS,
    AbortReason,
    SessionConfig,
    Telemetry,
    estimate_qber,
    eve_known_fraction,
    run_session,
    session_config_from_dict,
    sift,
    telemetry_csv,
)
from qrt.qubit_core import (
    NO_CLICK,
    Basis,
    ChannelParams,
    DetectionOutcome,
    InvalidParameter,
)
from qrt.rng import make_rng

NOISY = ChannelParams(transmittance=0.5, depolarize_prob=0.02, dark_count_prob=1e-4, detector_efficiency=0.9)


def test_sift_rule():
    outcomes = [DetectionOutcome.click(0, Basis.RECTILINEAR), NO_CLICK,
                DetectionOutcome.click(1, Basis.DIAGONAL), DetectionOutcome.click(1, Basis.DIAGONAL)]
    assert sift([0, 0, 1, 0], [0, 0, 1, 1], outcomes).tolist() == [0, 2]
    assert sift([0, 1], [0, 1], np.array([True, True])).tolist() == [0, 1]
    with pytest.raises(InvalidParameter):
        sift([0], [0, 1], [True, True])


def test_estimate_qber_empty_is_undefined():
    q, rev = estimate_qber([], [], 0.1, make_rng(0))
    assert q is None and len(rev) == 0


def test_estimate_qber_counts_revealed_errors():
    a = np.zeros(1000, dtype=np.int8)
    b = a.copy()
    b[::10] = 1
    q, rev = estimate_qber(a, b, 0.5, make_rng(1))
    assert len(rev) == 500
    assert q == np.mean(a[rev] != b[rev])


def test_honest_ideal_session():
    t, tel = run_session(SessionConfig(n_rounds=20_000), ChannelParams.ideal(), seed=3)
    assert t.abort_reason is None
    assert np.array_equal(t.alice_final_key, t.bob_final_key)
    assert tel.qber_estimate == 0.0
    assert 0.47 < tel.sift_ratio < 0.53
    assert set(t.key_indices).isdisjoint(t.revealed_indices)
    assert set(t.key_indices) <= set(t.sifted_indices)


def test_noisy_session_reconciles():
    t, tel = run_session(SessionConfig(n_rounds=30_000), NOISY, seed=4)
    assert t.abort_reason is None
    assert np.array_equal(t.alice_final_key, t.bob_final_key)
    assert len(t.alice_final_key) <= len(t.key_indices) - t.leaked_bits


def test_full_intercept_aborts():
    t, _ = run_session(SessionConfig(n_rounds=30_000), NOISY, adv.InterceptResend(1.0), seed=5)
    assert t.abort_reason is AbortReason.QBER_EXCEEDED
    assert t.alice_final_key is None


def test_tiny_session_has_insufficient_key():
    t, tel = run_session(SessionConfig(n_rounds=20), NOISY, seed=6)
    assert t.abort_reason is AbortReason.INSUFFICIENT_KEY


def test_same_seed_same_transcript():
    a, ta = run_session(SessionConfig(n_rounds=5000), NOISY, adv.InterceptResend(0.3), seed=9)
    b, tb = run_session(SessionConfig(n_rounds=5000), NOISY, adv.InterceptResend(0.3), seed=9)
    assert np.array_equal(a.bob_bits, b.bob_bits)
    assert a.parity_messages == b.parity_messages
    assert ta == tb


def test_passive_adversary_changes_nothing():
    a, _ = run_session(SessionConfig(n_rounds=5000), NOISY, None, seed=2)
    b, _ = run_session(SessionConfig(n_rounds=5000), NOISY, adv.NoAdversary(), seed=2)
    assert np.array_equal(a.bob_bits, b.bob_bits)
    assert np.array_equal(a.alice_final_key, b.alice_final_key)


def test_decoy_classes_never_enter_key():
    cfg = SessionConfig(n_rounds=20_000, decoy_enabled=True)
    t, tel = run_session(cfg, NOISY, seed=11)
    assert np.all(t.intensity_class[t.key_indices] == 0)
    non_signal = t.sifted_indices[t.intensity_class[t.sifted_indices] != 0]
    assert set(non_signal) <= set(t.revealed_indices)
    assert set(tel.gain_per_intensity) == {"signal", "decoy", "vacuum"}
    assert t.decoy is not None and not t.decoy.pns_suspected


def test_eve_known_fraction_under_pns():
    ch = ChannelParams(transmittance=0.3, depolarize_prob=0.01, dark_count_prob=1e-4, detector_efficiency=0.8)
    b = adv.compensating_block_prob(0.5, ch)
    t, _ = run_session(SessionConfig(n_rounds=50_000), ch, adv.PhotonNumberSplit(b), seed=1)
    assert t.abort_reason is None
    # Eve holds every multi-photon arrival; those are p_multi / (1 - e^{-t mu}) of the clicks
    expect = (1 - math.exp(-0.5) * 1.5) / (1 - math.exp(-0.15))
    assert eve_known_fraction(t) == pytest.approx(expect, abs=0.03)


def test_fault_log_attached():
    t, _ = run_session(SessionConfig(n_rounds=2000), NOISY, adv.FaultInject("detector_blind", 0.5), seed=1)
    assert t.fault_log is not None and t.fault_log.suppressed.any()
    assert not np.any(t.clicked & t.fault_log.suppressed)


def test_telemetry_round_trip_and_csv():
    _, tel = run_session(SessionConfig(n_rounds=3000, decoy_enabled=True), NOISY, seed=8, session_id="x")
    assert Telemetry.from_dict(tel.to_dict()) == tel
    rows = list(csv.reader(io.StringIO(telemetry_csv([tel, tel]))))
    assert tuple(rows[0]) == TELEMETRY_COLUMNS
    assert len(rows) == 3 and rows[1][0] == "x"


@pytest.mark.parametrize("kwargs", [
    {"n_rounds": 0}, {"mu_vacuum": 0.1}, {"intensity_probs": (0.5, 0.5, 0.5)},
    {"sample_fraction": 0.8}, {"qber_abort_threshold": 0.6}, {"decoy_enabled": True, "mu_decoy": 0.6},
    {"basis_prob": 1.0}, {"cascade_passes": 0},
])
def test_invalid_config(kwargs):
    with pytest.raises(InvalidParameter):
        SessionConfig(**kwargs)


def test_config_from_dict_rejects_unknown():
    assert session_config_from_dict({"n_rounds": 5, "intensity_probs": [0.5, 0.3, 0.2]}).n_rounds == 5
    with pytest.raises(InvalidParameter):
        session_config_from_dict({"rounds": 5})

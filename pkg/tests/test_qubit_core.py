from __future__ import annotations

import math

import numpy as np
import pytest

from qrt.qubit_core import (
    NO_CLICK,
    Basis,
    ChannelParams,
    DetectionOutcome,
    IntensityClass,
    InvalidParameter,
    PhotonPulse,
    PulseBatch,
    measure,
    measure_batch,
    prepare_batch,
    prepare_pulse,
    transmit,
    transmit_batch,
    with_photons,
)
from qrt.rng import make_rng

N = 200_000


def _batch(mu: float, seed: int = 0, n: int = N) -> PulseBatch:
    rng = make_rng(seed)
    bits = rng.integers(0, 2, n)
    bases = rng.integers(0, 2, n)
    return prepare_batch(bits, bases, np.full(n, mu), np.zeros(n, dtype=np.int8), rng)


def _within(observed: float, p: float, n: int, sigmas: float = 4.0) -> bool:
    return abs(observed - p) <= sigmas * math.sqrt(p * (1 - p) / n)


class TestSource:
    def test_multiphoton_fraction_matches_poisson(self):
        # P(n >= 2) at mu = 0.5 is 1 - e^{-0.5} * 1.5 = 0.090204
        p = 1 - math.exp(-0.5) * 1.5
        assert p == pytest.approx(0.0902, abs=5e-5)
        b = _batch(0.5)
        assert _within(np.mean(b.photon_count >= 2), p, N)

    def test_vacuum_fraction_at_decoy_intensity(self):
        p = math.exp(-0.1)
        assert p == pytest.approx(0.904837, abs=1e-6)
        assert _within(np.mean(_batch(0.1).photon_count == 0), p, N)

    def test_zero_intensity_is_always_empty(self):
        assert np.all(_batch(0.0, n=1000).photon_count == 0)

    @pytest.mark.parametrize("mu", [-0.1, float("nan"), float("inf")])
    def test_rejects_bad_mean(self, mu):
        with pytest.raises(InvalidParameter):
            prepare_pulse(0, Basis.RECTILINEAR, mu, IntensityClass.SIGNAL, make_rng(0))

    def test_rejects_non_binary_bit(self):
        with pytest.raises(InvalidParameter):
            prepare_pulse(2, Basis.RECTILINEAR, 0.5, IntensityClass.SIGNAL, make_rng(0))

    def test_round_ids_are_consecutive(self):
        b = prepare_batch(np.zeros(5), np.zeros(5), np.ones(5), np.zeros(5), make_rng(0), first_round=10)
        assert b.round_id.tolist() == [10, 11, 12, 13, 14]


class TestChannel:
    def test_loss_is_per_photon_binomial(self):
        # a pulse survives non-empty with probability 1 - exp(-t * mu)
        t, mu = 0.3, 0.5
        arrival = transmit_batch(_batch(mu), ChannelParams(transmittance=t), make_rng(1))
        assert _within(np.mean(arrival.photon_count > 0), 1 - math.exp(-t * mu), N)

    def test_lossless_noiseless_channel_is_identity(self):
        b = _batch(0.5, n=1000)
        out = transmit_batch(b, ChannelParams.ideal(), make_rng(2))
        assert np.array_equal(out.photon_count, b.photon_count)
        assert np.array_equal(out.bit, b.bit)

    def test_depolarization_flips_occupied_pulses(self):
        b = _batch(2.0)
        out = transmit_batch(b, ChannelParams(depolarize_prob=0.1), make_rng(3))
        occ = out.photon_count > 0
        assert _within(np.mean(out.bit[occ] != b.bit[occ]), 0.1, int(occ.sum()))

    def test_transmittance_override(self):
        b = _batch(0.5, n=5000)
        out = transmit_batch(b, ChannelParams(transmittance=0.01), make_rng(4), transmittance=1.0)
        assert np.array_equal(out.photon_count, b.photon_count)

    @pytest.mark.parametrize("kwargs", [
        {"transmittance": 0.0}, {"transmittance": 1.5}, {"depolarize_prob": 0.6},
        {"dark_count_prob": 1.0}, {"detector_efficiency": 0.0}, {"timing_jitter": -1.0},
    ])
    def test_invalid_params(self, kwargs):
        with pytest.raises(InvalidParameter):
            ChannelParams(**kwargs)


class TestDetector:
    def test_matched_basis_reproduces_bit(self):
        b = _batch(1.0, n=20_000)
        out = measure_batch(b, b.basis.copy(), ChannelParams.ideal(), make_rng(5))
        occ = b.photon_count > 0
        assert np.all(out.clicked == occ)
        assert np.array_equal(out.bit[occ], b.bit[occ])

    def test_conjugate_basis_is_uniform(self):
        b = _batch(1.0)
        out = measure_batch(b, 1 - b.basis, ChannelParams.ideal(), make_rng(6))
        occ = b.photon_count > 0
        assert _within(np.mean(out.bit[occ] == b.bit[occ]), 0.5, int(occ.sum()))

    def test_dark_counts_on_vacuum(self):
        b = _batch(0.0)
        out = measure_batch(b, b.basis.copy(), ChannelParams(dark_count_prob=0.01), make_rng(7))
        assert _within(np.mean(out.clicked), 0.01, N)

    def test_efficiency(self):
        b = _batch(5.0)
        out = measure_batch(b, b.basis.copy(), ChannelParams(detector_efficiency=0.6), make_rng(8))
        occ = b.photon_count > 0
        assert _within(np.mean(out.clicked[occ]), 0.6, int(occ.sum()))


class TestScalarWrappers:
    def test_outcome_invariant(self):
        with pytest.raises(InvalidParameter):
            DetectionOutcome(True)
        with pytest.raises(InvalidParameter):
            DetectionOutcome(False, bit=1)
        assert NO_CLICK.bit is None and NO_CLICK.measured_basis is None

    def test_scalar_path(self):
        p = PhotonPulse(0, 1, Basis.DIAGONAL, 3)
        arrived = transmit(p, ChannelParams.ideal(), make_rng(0))
        assert arrived == p
        o = measure(arrived, Basis.DIAGONAL, ChannelParams.ideal(), make_rng(0))
        assert o == DetectionOutcome.click(1, Basis.DIAGONAL)
        assert measure(with_photons(p, 0), Basis.DIAGONAL, ChannelParams.ideal(), make_rng(0)) == NO_CLICK

    def test_batch_pulse_round_trip(self):
        pulses = [PhotonPulse(i, i % 2, Basis(i % 2), i, IntensityClass(i % 3)) for i in range(6)]
        b = PulseBatch.from_pulses(pulses)
        assert [b.pulse(i) for i in range(len(b))] == pulses

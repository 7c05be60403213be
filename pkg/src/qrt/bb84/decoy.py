"""Decoy-state yield analysis.

Detector model (matches :mod:`qrt.qubit_core`): a non-empty arrival clicks
with probability ``eff``; an empty one clicks with the dark-count
probability ``Y0``.  For intensity ``mu`` over a channel of transmittance
``t`` the gain is therefore ``Q = eff - (eff - Y0) * exp(-t * mu)``.

The signal gain fixes ``exp(-t * mu_s)``; the no-attack decoy gain follows
from it.  A photon-number-dependent attack that keeps the signal gain
unchanged cannot keep the decoy gain on that curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from ..qubit_core import IntensityClass, InvalidParameter

MIN_PULSES = 100


@dataclass(frozen=True)
class DecoyAnalysis:
    y0_estimate: float
    y1_lower_bound: float
    e1_upper_bound: float | None
    pns_suspected: bool
    predicted_decoy_gain: float
    observed_decoy_gain: float
    deviation_sigma: float


def _gain(pulses: int, clicks: int) -> tuple[float, float]:
    q = clicks / pulses
    return q, q * (1.0 - q) / pulses


def decoy_estimate(
    gains: Mapping[IntensityClass, tuple[int, int]],
    mu: Mapping[IntensityClass, float],
    detector_efficiency: float = 1.0,
    tolerance_sigma: float = 3.0,
    decoy_error_rate: float | None = None,
) -> DecoyAnalysis:
    """Estimate vacuum and single-photon yields and test for PNS.

    ``gains`` maps each intensity class to ``(pulses, clicks)``.
    ``decoy_error_rate`` is the error rate on sifted decoy bits; without it
    no single-photon error bound is reported.
    """
    for cls in (IntensityClass.SIGNAL, IntensityClass.DECOY, IntensityClass.VACUUM):
        if cls not in gains:
            raise InvalidParameter(f"missing intensity class {cls.name}")
        if gains[cls][0] < MIN_PULSES:
            raise InvalidParameter(f"{cls.name} has fewer than {MIN_PULSES} pulses")
    mu_s, mu_d = float(mu[IntensityClass.SIGNAL]), float(mu[IntensityClass.DECOY])
    if not 0.0 < mu_d < mu_s:
        raise InvalidParameter("need 0 < mu_decoy < mu_signal")

    q_s, var_s = _gain(*gains[IntensityClass.SIGNAL])
    q_d, var_d = _gain(*gains[IntensityClass.DECOY])
    y0, var_0 = _gain(*gains[IntensityClass.VACUUM])
    eff = detector_efficiency

    # e^{-t mu_s} from the signal gain, then the decoy gain it implies
    span = max(eff - y0, 1e-12)
    x = min(1.0, max((eff - q_s) / span, 1e-12))
    r = mu_d / mu_s
    predicted = eff - span * x**r
    d_qs = r * x ** (r - 1.0)
    d_y0 = (1.0 - r) * x**r
    sigma = math.sqrt(var_d + d_qs**2 * var_s + d_y0**2 * var_0)
    deviation = abs(q_d - predicted)
    dev_sigma = deviation / sigma if sigma > 0 else (0.0 if deviation == 0 else math.inf)

    # vacuum + weak decoy lower bound on the single-photon yield
    y1 = (mu_s / (mu_s * mu_d - mu_d**2)) * (
        q_d * math.exp(mu_d)
        - q_s * math.exp(mu_s) * mu_d**2 / mu_s**2
        - (mu_s**2 - mu_d**2) / mu_s**2 * y0
    )
    y1 = min(1.0, max(0.0, y1))
    e1 = None
    if decoy_error_rate is not None and y1 > 0:
        e1 = (decoy_error_rate * q_d * math.exp(mu_d) - 0.5 * y0) / (y1 * mu_d)
        e1 = min(1.0, max(0.0, e1))

    return DecoyAnalysis(
        y0_estimate=y0,
        y1_lower_bound=y1,
        e1_upper_bound=e1,
        pns_suspected=dev_sigma > tolerance_sigma,
        predicted_decoy_gain=predicted,
        observed_decoy_gain=q_d,
        deviation_sigma=dev_sigma,
    )

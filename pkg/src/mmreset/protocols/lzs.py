"""Shelving through an avoided crossing during a direct flux step."""

from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from ..errors import DomainError, NoCrossing
from ..flux import instantaneous_frequency, synthesize_pulse
from ..model import FluxPulse, TransmonParams

__all__ = ["lzs_survival", "diabatic_probability", "crossing_slope"]


def diabatic_probability(g_coupling: float, crossing_slope: float) -> float:
    """Landau-Zener probability of passing the crossing diabatically.

    ``g_coupling`` in GHz, ``crossing_slope`` in GHz/ns (both ordinary, not
    angular). Zero slope is fully adiabatic, infinite slope fully diabatic.
    """
    if crossing_slope < 0 or g_coupling < 0:
        raise DomainError("coupling and slope must be non-negative")
    if crossing_slope == 0:
        return 0.0
    if math.isinf(crossing_slope):
        return 1.0
    adiabaticity = 2 * math.pi * g_coupling**2 / crossing_slope
    return math.exp(-2 * math.pi * adiabaticity)


def lzs_survival(g_coupling: float, crossing_slope: float, p0: float) -> float:
    """Population shelved on the way out and returned on the way back."""
    if not 0 <= p0 <= 1:
        raise DomainError("p0 must lie in [0, 1]")
    return p0 * (1.0 - diabatic_probability(g_coupling, crossing_slope)) ** 2


def crossing_slope(transmon: TransmonParams, pulse: FluxPulse, f_cross: float) -> float:
    """|df/dt| (GHz/ns) where the rising edge first passes ``f_cross``.

    The sampled frequency is splined and differentiated centrally with a
    step of ``dt / 10``. An unfiltered pulse is an ideal step, whose slope is
    unbounded; ``inf`` is returned as that sentinel.
    """
    if pulse.modulated:
        raise ValueError("crossing_slope expects an unmodulated pulse")
    wave = synthesize_pulse(pulse)
    freq = instantaneous_frequency(transmon, wave)
    f = freq.samples - f_cross
    t = freq.times
    half = len(f) // 2 + 1
    sign = np.sign(f[:half])
    change = np.flatnonzero(sign[:-1] * sign[1:] <= 0)
    change = [i for i in change if not (sign[i] == 0 and sign[i + 1] == 0)]
    if not change:
        raise NoCrossing(f"{f_cross} GHz is not traversed on the rising edge")
    if pulse.sigma_filter == 0:
        return float("inf")
    i = change[0]
    spline = CubicSpline(t, f)
    lo, hi = t[max(i - 1, 0)], t[min(i + 2, len(t) - 1)]
    if spline(lo) * spline(hi) > 0:
        lo, hi = t[i], t[i + 1]
    t_c = brentq(spline, lo, hi, xtol=1e-12)
    h = wave.dt / 10
    return abs(float(spline(t_c + h) - spline(t_c - h))) / (2 * h)

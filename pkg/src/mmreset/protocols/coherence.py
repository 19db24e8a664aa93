"""Coherence bookkeeping: modulated T1, Ramsey inversion, coherence-limited error."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import DomainError
from ..flux import SidebandSpectrum
from ..model import WaveguideParams

__all__ = [
    "CoherenceSet",
    "in_band_weight",
    "t1_under_modulation",
    "t2_star",
    "tphi_from_t2",
    "coherence_limited_error",
    "lru_infidelity",
]


@dataclass(frozen=True)
class CoherenceSet:
    """Idle and under-modulation coherence times in us."""

    t1_idle: float = 12.0
    tphi_idle: float = 7.3
    t1_mod: float = 3.3
    tphi_mod: float = 3.7

    def __post_init__(self):
        for name in ("t1_idle", "tphi_idle", "t1_mod", "tphi_mod"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def in_band_weight(spectrum: SidebandSpectrum, wg: WaveguideParams, transition_j: int = 1) -> float:
    """Summed ``|xi_m|^2`` of sidebands inside the closed passband."""
    lo, hi = wg.passband
    centre = spectrum.f_avg + (transition_j - 1) * spectrum.anharmonicity
    total = 0.0
    for m, c in zip(spectrum.orders, spectrum.coefficients):
        f = centre + m * spectrum.f_mod
        if lo <= f <= hi:
            total += abs(c) ** 2
    return total


def t1_under_modulation(spectrum: SidebandSpectrum, wg: WaveguideParams, gamma_0: float) -> float:
    """Relaxation time (us) from the in-band sideband sum.

    ``gamma_0`` is the intrinsic decay rate in 1/ns; each in-band sideband
    decays at ``emission_rate * |xi_m|^2``.
    """
    rate = gamma_0 + wg.emission_rate * in_band_weight(spectrum, wg)
    if rate <= 0:
        return float("inf")
    return 1.0 / rate * 1e-3


def t2_star(t1: float, tphi: float) -> float:
    return 1.0 / (1.0 / (2.0 * t1) + 1.0 / tphi)


def tphi_from_t2(t1: float, t2_star_value: float) -> float:
    """Pure dephasing time from ``1/T2* = 1/(2 T1) + 1/Tphi``."""
    if not (t1 > 0 and t2_star_value > 0):
        raise DomainError("times must be positive")
    inv = 1.0 / t2_star_value - 1.0 / (2.0 * t1)
    if inv <= 0:
        raise DomainError("T2* must be shorter than 2 T1")
    return 1.0 / inv


def coherence_limited_error(t_gate_ns: float, t1_us: float, tphi_us: float) -> float:
    """Average gate error ``(t / 3) (1/T1 + 1/Tphi)`` for a qubit."""
    return t_gate_ns * 1e-3 / 3.0 * (1.0 / t1_us + 1.0 / tphi_us)


def lru_infidelity(tau_lru: float, tau_buffer_total: float, coh: CoherenceSet) -> float:
    """Coherence limit of an LRU: idle coherence during the buffers, modulated
    coherence for the remaining on-time. Durations in ns."""
    if tau_lru < tau_buffer_total:
        raise DomainError("tau_lru must be at least the total buffer time")
    return (coherence_limited_error(tau_buffer_total, coh.t1_idle, coh.tphi_idle)
            + coherence_limited_error(tau_lru - tau_buffer_total, coh.t1_mod, coh.tphi_mod))

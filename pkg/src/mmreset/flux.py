"""Tuning curve, flux-pulse synthesis and sideband decomposition."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SidebandTruncation
from .model import FluxPulse, TransmonParams, validate

__all__ = [
    "Waveform",
    "SidebandSpectrum",
    "tuning_curve",
    "gaussian_kernel",
    "pulse_envelope",
    "synthesize_pulse",
    "instantaneous_frequency",
    "sideband_spectrum",
    "transition_sideband_frequencies",
    "DEFAULT_MAX_ORDER",
]

DEFAULT_MAX_ORDER = 12


@dataclass(frozen=True, eq=False)
class Waveform:
    """Uniformly sampled signal starting at ``t0`` (ns)."""

    t0: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if len(self.samples) == 0:
            raise ValueError("waveform needs at least one sample")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.samples))

    @property
    def duration(self) -> float:
        return self.dt * (len(self.samples) - 1)

    def to_csv(self, path: str | Path, column: str = "phi") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_ns", column])
            for t, v in zip(self.times, self.samples):
                w.writerow([repr(float(t)), repr(float(v))])


def tuning_curve(transmon: TransmonParams, phi):
    """g-e frequency (GHz) of an asymmetric-SQUID transmon at flux ``phi`` (Phi0)."""
    ec = transmon.charging_energy
    top = transmon.f_ge_max + ec
    d = ((transmon.f_ge_min + ec) / top) ** 2
    c = np.cos(np.pi * np.asarray(phi, dtype=float))
    s2 = 1.0 - c * c
    return top * (c * c + d * d * s2) ** 0.25 - ec


def gaussian_kernel(sigma: float, dt: float) -> np.ndarray:
    """Unit-sum Gaussian taps on a ``dt`` grid, truncated at +-5 sigma."""
    if sigma <= 0:
        return np.ones(1)
    half = int(np.floor(5.0 * sigma / dt))
    x = dt * np.arange(-half, half + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def pulse_envelope(pulse: FluxPulse) -> Waveform:
    """Filtered square envelope E(t) in [0, 1] sampled at ``dt_sample``."""
    dt = pulse.dt_sample
    n = int(round(pulse.tau_pulse / dt)) + 1
    t = dt * np.arange(n)
    eps = 1e-9 * dt
    square = ((t >= pulse.tau_buffer - eps)
              & (t < pulse.tau_pulse - pulse.tau_buffer - eps)).astype(float)
    kernel = gaussian_kernel(pulse.sigma_filter, dt)
    half = (len(kernel) - 1) // 2
    env = np.convolve(square, kernel)[half:half + n]
    return Waveform(0.0, dt, np.clip(env, 0.0, 1.0))


def synthesize_pulse(pulse: FluxPulse) -> Waveform:
    validate(pulse).raise_if_invalid()
    env = pulse_envelope(pulse)
    if pulse.modulated:
        carrier = np.sin(2 * np.pi * pulse.f_mod * env.times)
    else:
        carrier = 1.0
    return Waveform(0.0, env.dt, pulse.phi_bias + pulse.phi_amplitude * env.samples * carrier)


def instantaneous_frequency(transmon: TransmonParams, waveform: Waveform) -> Waveform:
    return Waveform(waveform.t0, waveform.dt, tuning_curve(transmon, waveform.samples))


@dataclass(frozen=True, eq=False)
class SidebandSpectrum:
    """Sideband amplitudes ``xi_m`` of the phase-modulated g-e transition.

    ``coefficients[i]`` belongs to order ``orders[i] = i - max_order``; the
    sideband of order m sits at ``f_avg + m * f_mod``.
    """

    f_avg: float
    f_mod: float
    coefficients: np.ndarray
    max_order: int
    anharmonicity: float

    @property
    def orders(self) -> np.ndarray:
        return np.arange(-self.max_order, self.max_order + 1)

    def xi(self, m: int) -> complex:
        if abs(m) > self.max_order:
            return 0j
        return complex(self.coefficients[m + self.max_order])

    @property
    def total_weight(self) -> float:
        return float(np.sum(np.abs(self.coefficients) ** 2))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "re_xi", "im_xi", "abs_xi"])
            for m, c in zip(self.orders, self.coefficients):
                w.writerow([int(m), repr(float(c.real)), repr(float(c.imag)), repr(float(abs(c)))])


def _phase_from_rate(dw: np.ndarray, period: float) -> np.ndarray:
    """Zero-mean periodic antiderivative of ``dw`` via spectral integration."""
    n = len(dw)
    k = 2 * np.pi / period * np.fft.fftfreq(n, 1.0 / n)
    spec = np.fft.fft(dw)
    out = np.zeros_like(spec)
    nz = k != 0
    out[nz] = spec[nz] / (1j * k[nz])
    theta = np.fft.ifft(out).real
    return theta - theta[0]


def sideband_spectrum(
    transmon: TransmonParams,
    pulse: FluxPulse,
    max_order: int = DEFAULT_MAX_ORDER,
    n_samples: int = 4096,
    truncation_tol: float = 1e-6,
) -> SidebandSpectrum:
    """Fourier sidebands of the flat-top modulation over one period.

    Envelope edges are ignored. Raises :class:`SidebandTruncation` when the
    retained orders carry less than ``1 - truncation_tol`` of the weight.
    """
    eta = transmon.anharmonicity_eta
    coeffs = np.zeros(2 * max_order + 1, dtype=complex)
    if pulse.phi_amplitude == 0 or not pulse.modulated:
        f_static = float(tuning_curve(transmon, pulse.phi_bias + pulse.phi_amplitude))
        coeffs[max_order] = 1.0
        return SidebandSpectrum(f_static, pulse.f_mod, coeffs, max_order, eta)

    period = 1.0 / pulse.f_mod
    n = max(n_samples, 8 * (2 * max_order + 1))
    t = period * np.arange(n) / n
    f = tuning_curve(transmon, pulse.phi_bias + pulse.phi_amplitude * np.sin(2 * np.pi * pulse.f_mod * t))
    f_avg = float(np.mean(f))
    theta = _phase_from_rate(2 * np.pi * (f - f_avg), period)
    full = np.fft.fft(np.exp(1j * theta)) / n
    orders = np.arange(-max_order, max_order + 1)
    coeffs = full[orders % n]
    weight = float(np.sum(np.abs(coeffs) ** 2))
    if weight < 1.0 - truncation_tol:
        raise SidebandTruncation(
            f"orders |m| <= {max_order} carry {weight:.9f} of the weight; increase max_order")
    return SidebandSpectrum(f_avg, pulse.f_mod, coeffs, max_order, eta)


def transition_sideband_frequencies(spectrum: SidebandSpectrum, transition_j: int) -> list[tuple[int, float]]:
    """Sideband frequencies of the ``|j-1> <-> |j>`` transition.

    The anharmonicity is treated as flux independent, so every transition
    shares the g-e amplitudes and is offset by ``(j - 1) * eta``.
    """
    if transition_j < 1:
        raise ValueError("transition_j must be >= 1")
    centre = spectrum.f_avg + (transition_j - 1) * spectrum.anharmonicity
    return [(int(m), centre + m * spectrum.f_mod) for m in spectrum.orders]


def with_tau(pulse: FluxPulse, tau: float) -> FluxPulse:
    return dataclasses.replace(pulse, tau_pulse=float(tau))

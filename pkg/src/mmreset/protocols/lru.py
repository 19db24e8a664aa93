"""Leakage reduction through a single lossy mode.

The f-e sideband of the modulated atom exchanges the ``|f>`` population with
one damped mode. Within that two-state picture the amplitudes obey

    d/dt (c_f, c_l) = A (c_f, c_l),
    A = [[-gamma_ef/2, -i g_sb], [-i g_sb, -i delta - kappa/2]]

with ``g_sb = sqrt(2) g_l |xi_m|`` and ``delta = 2 pi (f_sb - f_l)``. The
closed form below solves this system exactly, including the bare f decay in
the initial slope.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import interp1d
from scipy.optimize import least_squares, minimize

from ..errors import FitDiverged
from ..flux import pulse_envelope, sideband_spectrum
from ..io import parallel_map
from ..model import DeviceConfig, FluxPulse, TransmonParams, validate
from .coherence import t1_under_modulation
from .reset import simulate_reset_trace

__all__ = [
    "LossyModeParams",
    "LossyModeFit",
    "LruTrace",
    "LruScanResult",
    "REFERENCE_LOSSY_MODE",
    "lru_analytic_pf",
    "damped_rabi",
    "lru_sideband",
    "first_local_minimum",
    "lru_pulse_trace",
    "lru_scan",
    "fit_lossy_mode",
    "lossy_mode_model",
]

TWO_PI = 2 * math.pi
LRU_ORDER = -2


@dataclass(frozen=True)
class LossyModeParams:
    """Lossy mode seen by the f-e sideband.

    ``g_l``, ``f_l`` and ``kappa_l`` in GHz (ordinary), ``gamma_ef`` in 1/ns.
    """

    g_l: float = 0.0467
    f_l: float = 6.93
    kappa_l: float = 0.0176
    p_ss: float = 0.0015
    gamma_ef: float = 1.0 / 4700.0

    def __post_init__(self):
        for name in ("g_l", "f_l", "kappa_l", "p_ss", "gamma_ef"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.p_ss >= 1:
            raise ValueError("p_ss must be < 1")


REFERENCE_LOSSY_MODE = LossyModeParams()


def _amplitude(g_ang, delta_ang, kappa_ang, gamma, t):
    """Exact ``c_f(t)`` of the 2x2 system with ``c_f(0) = 1``, ``c_l(0) = 0``."""
    t = np.asarray(t, dtype=float)
    a11 = -0.5 * gamma
    b = 0.5 * (kappa_ang + gamma) + 1j * delta_ang
    c = g_ang**2 + 0.5j * delta_ang * gamma + 0.25 * kappa_ang * gamma
    root = np.sqrt(b * b - 4 * c + 0j)
    alpha_p = 0.5 * (-b + root)
    alpha_m = 0.5 * (-b - root)
    # expand around the slower root so nothing overflows and degeneracy is smooth
    alpha_a, alpha_b = (alpha_p, alpha_m) if alpha_p.real >= alpha_m.real else (alpha_m, alpha_p)
    d = alpha_b - alpha_a
    if abs(d) < 1e-12:
        ratio = t.astype(complex)
    else:
        ratio = np.expm1(d * t) / d
    return np.exp(alpha_a * t) * (1.0 + (a11 - alpha_a) * ratio)


def lru_analytic_pf(params: LossyModeParams, sideband: tuple[complex, float], t) -> np.ndarray | float:
    """``P_f(t)`` for a constant sideband ``(xi_m, f_sb)`` switched on at ``t = 0``."""
    xi, f_sb = sideband
    g_ang = TWO_PI * math.sqrt(2.0) * params.g_l * abs(xi)
    delta = TWO_PI * (f_sb - params.f_l)
    amp = _amplitude(g_ang, delta, TWO_PI * params.kappa_l, params.gamma_ef, t)
    pf = (1.0 - params.p_ss) * np.abs(amp) ** 2 + params.p_ss
    return pf if np.ndim(pf) else float(pf)


def damped_rabi(g: float, delta: float, kappa: float, t) -> np.ndarray | float:
    """Excited population of a qubit exchanging with a damped mode (GHz inputs)."""
    p = LossyModeParams(g_l=g / math.sqrt(2.0), f_l=0.0, kappa_l=kappa, p_ss=0.0, gamma_ef=0.0)
    return lru_analytic_pf(p, (1.0, delta), t)


def lru_sideband(transmon: TransmonParams, pulse: FluxPulse, order: int = LRU_ORDER) -> tuple[complex, float]:
    """``(xi_m, f_sb)`` of the f-e transition for the flat-top modulation."""
    spec = sideband_spectrum(transmon, pulse)
    f_sb = spec.f_avg + transmon.anharmonicity_eta + order * spec.f_mod
    return spec.xi(order), f_sb


def first_local_minimum(tau: Sequence[float], values: Sequence[float]) -> tuple[float, float] | None:
    """First interior grid point lower than its left and not above its right
    neighbour; ``None`` when the trace has no interior minimum."""
    v = np.asarray(values, dtype=float)
    for i in range(1, len(v) - 1):
        if v[i] < v[i - 1] and v[i] <= v[i + 1]:
            return float(tau[i]), float(v[i])
    return None


class _SidebandTable:
    """``|xi_m|`` and the f-e sideband frequency versus instantaneous amplitude."""

    def __init__(self, transmon, pulse, order, n_amp=41):
        amps = np.linspace(0.0, abs(pulse.phi_amplitude), n_amp)
        xi, fsb = [], []
        for a in amps:
            p = dataclasses.replace(pulse, phi_amplitude=float(a))
            x, f = lru_sideband(transmon, p, order)
            xi.append(abs(x))
            fsb.append(f)
        self.xi = interp1d(amps, xi, kind="cubic", assume_sorted=True)
        self.fsb = interp1d(amps, fsb, kind="cubic", assume_sorted=True)
        self.amplitude = abs(pulse.phi_amplitude)


def lru_pulse_trace(
    params: LossyModeParams,
    transmon: TransmonParams,
    pulse: FluxPulse,
    tau_grid: Sequence[float],
    order: int = LRU_ORDER,
) -> np.ndarray:
    """``P_f`` at the end of pulses of length ``tau`` (ns) including the edges.

    The sideband amplitude and frequency follow the filtered envelope
    adiabatically, i.e. they are evaluated at the instantaneous modulation
    amplitude ``phi_amplitude * E(t)``. Each ``tau`` uses its own envelope,
    and the system is propagated exactly over each sample step with the
    coefficients frozen at the step midpoint.
    """
    validate(pulse).raise_if_invalid()
    table = _SidebandTable(transmon, pulse, order)
    kappa = TWO_PI * params.kappa_l
    out = []
    for tau in tau_grid:
        if tau < 2 * pulse.tau_buffer:
            raise ValueError(f"tau {tau} shorter than both buffers")
        env = pulse_envelope(dataclasses.replace(pulse, tau_pulse=float(tau)))
        if len(env) < 2:
            out.append(1.0)
            continue
        # coefficients at interval midpoints, held constant over each sample step
        amp = table.amplitude * 0.5 * (env.samples[1:] + env.samples[:-1])
        g = TWO_PI * math.sqrt(2.0) * params.g_l * table.xi(amp)
        d = TWO_PI * (table.fsb(amp) - params.f_l)
        n = len(amp)
        gen = np.empty((n, 2, 2), dtype=complex)
        gen[:, 0, 0] = -0.5 * params.gamma_ef
        gen[:, 0, 1] = -1j * g
        gen[:, 1, 0] = -1j * g
        gen[:, 1, 1] = -1j * d - 0.5 * kappa
        u = _ordered_product(_expm_2x2(gen * env.dt))
        cf = u[0, 0]
        out.append((1.0 - params.p_ss) * abs(cf) ** 2 + params.p_ss)
    return np.asarray(out)


def _expm_2x2(m: np.ndarray) -> np.ndarray:
    """Matrix exponentials of a stack of 2x2 matrices (closed form)."""
    half_tr = 0.5 * (m[:, 0, 0] + m[:, 1, 1])
    b = m.copy()
    b[:, 0, 0] -= half_tr
    b[:, 1, 1] -= half_tr
    # b is traceless, so b @ b = s^2 I
    s = np.sqrt(b[:, 0, 0] ** 2 + b[:, 0, 1] * b[:, 1, 0] + 0j)
    small = np.abs(s) < 1e-8
    safe = np.where(small, 1.0, s)
    sinhc = np.where(small, 1.0 + s * s / 6.0, np.sinh(safe) / safe)
    out = sinhc[:, None, None] * b
    out[:, 0, 0] += np.cosh(s)
    out[:, 1, 1] += np.cosh(s)
    return np.exp(half_tr)[:, None, None] * out


def _ordered_product(stack: np.ndarray) -> np.ndarray:
    """``stack[n-1] @ ... @ stack[0]`` by pairwise reduction."""
    while len(stack) > 1:
        if len(stack) % 2:
            stack = np.concatenate([stack, np.eye(2, dtype=stack.dtype)[None]])
        stack = stack[1::2] @ stack[0::2]
    return stack[0]


@dataclass(frozen=True, eq=False)
class LruScanResult:
    f_mod: np.ndarray
    phi_a: np.ndarray
    tau_lru: np.ndarray       # nan where the trace has no interior minimum
    p_f_min: np.ndarray
    residual_p_e: np.ndarray
    status: np.ndarray


def _scan_point(args):
    config, lossy, base, f_mod, phi_a, tau_grid, backend = args
    pulse = dataclasses.replace(base, f_mod=float(f_mod), phi_amplitude=float(phi_a))
    pf = lru_pulse_trace(lossy, config.transmon, pulse, tau_grid)
    found = first_local_minimum(tau_grid, pf)
    if found is None:
        return (float("nan"), float("nan"), float("nan"))
    tau, pmin = found
    if backend == "chain":
        err = simulate_reset_trace(config, dataclasses.replace(pulse, tau_pulse=tau), "e",
                                   [tau], include_floor=False, observable="p_e")
        p_e = float(err[0])
    else:
        spec = sideband_spectrum(config.transmon, pulse)
        t1 = t1_under_modulation(spec, config.waveguide, 1e-3 / config.transmon.t1_idle_ge)
        p_e = math.exp(-tau * 1e-3 / t1)
    return (tau, pmin, p_e)


def lru_scan(
    config: DeviceConfig,
    f_mod_grid: Sequence[float],
    phi_a_grid: Sequence[float],
    tau_grid: Sequence[float] | None = None,
    lossy: LossyModeParams = REFERENCE_LOSSY_MODE,
    pulse: FluxPulse | None = None,
    backend: str = "analytic",
    threads: int = 1,
) -> LruScanResult:
    """Map of ``tau_LRU`` (first local minimum of ``P_f``) and residual ``P_e``.

    ``backend="analytic"`` takes ``P_e`` from the sideband-sum relaxation
    time; ``"chain"`` simulates the prepared-e trace in the waveguide model.
    """
    if len(f_mod_grid) == 0 or len(phi_a_grid) == 0:
        raise ValueError("grids must be nonempty")
    if backend not in ("analytic", "chain"):
        raise ValueError("backend must be 'analytic' or 'chain'")
    base = pulse or FluxPulse()
    if tau_grid is None:
        tau_grid = np.arange(2 * base.tau_buffer + 1, 121.0, 1.0)
    tau_grid = np.asarray(tau_grid, dtype=float)
    tasks = [(config, lossy, base, fm, pa, tau_grid, backend) for fm in f_mod_grid for pa in phi_a_grid]
    outcomes = parallel_map(_scan_point, tasks, threads)
    shape = (len(f_mod_grid), len(phi_a_grid))
    vals = np.full(shape + (3,), np.nan)
    status = np.empty(shape, dtype=object)
    for k, oc in enumerate(outcomes):
        i, j = divmod(k, shape[1])
        if oc.ok:
            vals[i, j] = oc.value
            status[i, j] = "ok" if np.isfinite(oc.value[0]) else "no_minimum"
        else:
            status[i, j] = oc.error
    return LruScanResult(np.asarray(f_mod_grid, float), np.asarray(phi_a_grid, float),
                         vals[..., 0], vals[..., 1], vals[..., 2], status)


# -- fitting ---------------------------------------------------------------------

@dataclass(frozen=True)
class LruTrace:
    """Measured-style ``P_f(t)`` under constant modulation at one pulse setting."""

    f_mod: float
    phi_a: float
    t: np.ndarray
    p_f: np.ndarray


@dataclass(frozen=True, eq=False)
class LossyModeFit:
    params: LossyModeParams
    rms: float
    residual_norm: float
    n_starts: int


def lossy_mode_model(params: LossyModeParams, sidebands, traces) -> np.ndarray:
    return np.concatenate([lru_analytic_pf(params, sb, tr.t) for sb, tr in zip(sidebands, traces)])


def fit_lossy_mode(
    traces: Sequence[LruTrace],
    transmon: TransmonParams,
    pulse: FluxPulse | None = None,
    upper_band_edge: float = 7.0,
    n_starts: int = 8,
    seed: int = 0,
    order: int = LRU_ORDER,
) -> LossyModeFit:
    """Least-squares estimate of ``(g_l, f_l, kappa_l, p_ss)``.

    Multistart Nelder-Mead in box-normalised coordinates followed by a
    bounded trust-region polish from the best start. ``gamma_ef`` is fixed to
    ``1 / t1_idle_ef``. A single trace only fixes ``|f_sb - f_l|``; traces at
    several modulation frequencies make the sign identifiable.
    """
    if not traces or any(len(tr.t) < 10 for tr in traces):
        raise ValueError("need at least one trace with >= 10 points")
    base = pulse or FluxPulse()
    sidebands = [lru_sideband(transmon, dataclasses.replace(base, f_mod=tr.f_mod, phi_amplitude=tr.phi_a), order)
                 for tr in traces]
    data = np.concatenate([np.asarray(tr.p_f, float) for tr in traces])
    gamma_ef = 1e-3 / transmon.t1_idle_ef
    lo = np.array([1e-6, upper_band_edge - 0.3, 1e-6, 0.0])
    hi = np.array([0.2, upper_band_edge + 0.3, 0.1, 0.02])
    span = hi - lo

    def unpack(u):
        x = lo + span * np.clip(u, 0.0, 1.0)
        return LossyModeParams(x[0], x[1], x[2], x[3], gamma_ef)

    def resid(u):
        return lossy_mode_model(unpack(u), sidebands, traces) - data

    def cost(u):
        # quadratic wall outside the box keeps the simplex inside
        out = np.sum(np.clip(u - 1, 0, None) ** 2 + np.clip(-u, 0, None) ** 2)
        r = resid(u)
        return float(r @ r) + 1e3 * out

    rng = np.random.default_rng(seed)
    starts = rng.uniform(0.05, 0.95, size=(n_starts, 4))
    best = None
    for u0 in starts:
        res = minimize(cost, u0, method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-14, "maxiter": 4000, "maxfev": 8000})
        if best is None or res.fun < best.fun:
            best = res
    polish = least_squares(resid, np.clip(best.x, 0.0, 1.0), bounds=(0.0, 1.0),
                           xtol=1e-15, ftol=1e-15, gtol=1e-15, x_scale="jac")
    u = polish.x if polish.cost * 2 <= best.fun else np.clip(best.x, 0, 1)
    r = resid(u)
    rms = float(np.sqrt(np.mean(r * r)))
    if rms > 0.05:
        raise FitDiverged(f"best residual RMS {rms:.3g} exceeds 0.05")
    return LossyModeFit(unpack(u), rms, float(np.linalg.norm(r)), n_starts)

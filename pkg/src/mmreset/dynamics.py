"""Open-system time evolution and thermal populations.

All propagation happens in a frame rotating at ``frame_frequency`` per
excitation. Because every Hamiltonian term conserves the excitation number,
this frame is exact and removes the ~GHz absolute phases; the flux drive
enters as ``2 pi delta_f(t) * h_qubit_detune``.

Two engines are provided.

``manifold_cascade``
    The unjumped amplitude evolves under the non-Hermitian effective
    Hamiltonian. Each photon-loss jump lowers the excitation number by one,
    so the jumped population is carried as one dense density-matrix block per
    lower manifold, fed by the jumps out of the manifold above. Populations
    are exact; coherences between different manifolds are not tracked since
    no observable here depends on them. With a single excitation the only
    block is the scalar vacuum and the method reduces to plain non-Hermitian
    vector evolution (``non_hermitian_vector``).

``lindblad_rk``
    Full density-matrix Lindblad equation on the whole truncated space, fixed
    RK4 steps with step-doubling error control. Meant as a reference for
    small spaces.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.constants as const
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import DomainError, FrameAliasing, ToleranceNotMet
from .flux import Waveform
from .hilbert import SystemOperators, dressed_state

__all__ = [
    "QuantumState",
    "EvolutionResult",
    "evolve",
    "initial_state",
    "thermal_population",
    "temperature_from_population",
    "METHODS",
    "DEFAULT_TOL",
]

METHODS = ("non_hermitian_vector", "manifold_cascade", "lindblad_rk")
DEFAULT_TOL = 1e-8
SAMPLES_PER_PERIOD = 20


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Pure vector or density matrix on the basis of ``SystemOperators``.

    Vectors evolved non-Hermitianly carry norm below one; the missing weight
    lives in ``blocks`` (density matrices of the lower manifolds).
    """

    amplitudes: np.ndarray
    is_density: bool = False
    blocks: tuple[np.ndarray, ...] = ()
    basis_dim: int = 0

    @property
    def trace(self) -> float:
        if self.is_density:
            return float(np.trace(self.amplitudes).real)
        return float(np.vdot(self.amplitudes, self.amplitudes).real) + sum(
            float(np.trace(b).real) for b in self.blocks)


@dataclass(frozen=True, eq=False)
class EvolutionResult:
    """Observables on the output grid.

    ``level_populations[:, j]`` is the atom-reduced population of level j
    (photon-bearing and already-jumped states included), so the levels sum to
    the retained trace. ``leaked`` is the cumulative jump flux, i.e. the mean
    number of photons that have left through the damped ends.
    """

    times: np.ndarray
    level_populations: np.ndarray
    n_wg: np.ndarray
    mode_occupations: np.ndarray
    leaked: np.ndarray
    norm: np.ndarray
    final_state: QuantumState

    @property
    def p_g(self) -> np.ndarray:
        return self.level_populations[:, 0]

    @property
    def p_e(self) -> np.ndarray:
        return self.level_populations[:, 1]

    @property
    def p_f(self) -> np.ndarray:
        if self.level_populations.shape[1] < 3:
            return np.zeros(len(self.times))
        return self.level_populations[:, 2]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_ns", "p_g", "p_e", "p_f", "n_wg", "leaked"])
            for row in zip(self.times, self.p_g, self.p_e, self.p_f, self.n_wg, self.leaked):
                w.writerow([repr(float(x)) for x in row])


# -- thermal populations -----------------------------------------------------

def thermal_population(f, temperature):
    """Two-level Boltzmann occupation ``1 / (1 + exp(h f / k T))``.

    ``f`` in GHz, ``temperature`` in mK; vectorised.
    """
    f = np.asarray(f, dtype=float)
    temperature = np.asarray(temperature, dtype=float)
    if np.any(temperature < 0) or np.any(f <= 0):
        raise DomainError("need f > 0 and temperature >= 0")
    with np.errstate(divide="ignore", over="ignore"):
        x = const.h * f * 1e9 / (const.k * temperature * 1e-3)
        out = 1.0 / (1.0 + np.exp(x))
    return out if out.ndim else float(out)


def temperature_from_population(f, p_e):
    """Inverse of :func:`thermal_population`; returns mK."""
    f = np.asarray(f, dtype=float)
    p_e = np.asarray(p_e, dtype=float)
    if np.any(p_e <= 0) or np.any(p_e >= 0.5) or np.any(f <= 0):
        raise DomainError("need f > 0 and 0 < p_e < 0.5")
    t = const.h * f * 1e9 / (const.k * np.log1p(-p_e) - const.k * np.log(p_e)) * 1e3
    return t if t.ndim else float(t)


# -- helpers -------------------------------------------------------------------

@lru_cache(maxsize=32)
def _cached_dressed(sys: SystemOperators, level: int) -> np.ndarray:
    return dressed_state(sys, level)


def initial_state(sys: SystemOperators, atom_level: int, dressed: bool = True) -> np.ndarray:
    """Atom in ``atom_level`` with the chain empty.

    ``dressed=True`` returns the eigenstate of the idle Hamiltonian that is
    adiabatically connected to the bare state, which is what a slow
    preparation produces and avoids a spurious initial photon burst.
    """
    if dressed:
        return _cached_dressed(sys, atom_level).copy()
    psi = np.zeros(sys.dim, dtype=complex)
    psi[sys.bare_index(atom_level)] = 1.0
    return psi


def _frame_hamiltonian(sys: SystemOperators) -> sp.csr_matrix:
    shift = 2 * math.pi * sys.frame_frequency * sys.excitations
    return (sys.h_static - sp.diags(shift)).tocsr()


def _fastest_frequency(sys: SystemOperators, detune: np.ndarray, dt: float) -> float:
    """Largest frame frequency the drive grid has to resolve (GHz)."""
    n = sys.excitations
    diag = sys.h_static.diagonal().real / (2 * math.pi)
    mask = n > 0
    bare = np.max(np.abs(diag[mask] / n[mask] - sys.frame_frequency)) if np.any(mask) else 0.0
    f_frame = bare + float(np.max(np.abs(detune))) if len(detune) else bare
    # highest harmonic of the drive carrying non-negligible power
    f_drive = 0.0
    if len(detune) > 2:
        spec = np.abs(np.fft.rfft(detune - detune.mean())) ** 2
        total = spec.sum()
        if total > 0:
            freqs = np.fft.rfftfreq(len(detune), dt)
            k = int(np.searchsorted(np.cumsum(spec) / total, 1.0 - 1e-6))
            f_drive = float(freqs[min(k, len(freqs) - 1)])
    return max(f_frame, f_drive)


def _manifold_blocks(sys: SystemOperators, n_top: int):
    """Index arrays and restricted jump operators for the cascade blocks."""
    exc = sys.excitations
    idx = [np.flatnonzero(exc == k) for k in range(n_top + 1)]
    jumps = []
    for k in range(1, n_top + 1):
        ops = []
        for op, rate in sys.collapse_ops:
            sub = op[idx[k - 1]][:, idx[k]]
            ops.append((math.sqrt(rate) * sub).toarray())
        jumps.append(ops)
    return idx, jumps


class _Drive:
    def __init__(self, drive: Waveform | None):
        if drive is None or len(drive) < 2:
            self.const = 0.0 if drive is None else float(drive.samples[0])
            self.spline = None
            self.t0, self.t1 = -np.inf, np.inf
            return
        self.spline = CubicSpline(drive.times, 2 * math.pi * np.asarray(drive.samples, dtype=float))
        self.t0, self.t1 = drive.times[0], drive.times[-1]
        self.end = (2 * math.pi * float(drive.samples[0]), 2 * math.pi * float(drive.samples[-1]))

    def __call__(self, t: float) -> float:
        if self.spline is None:
            return 2 * math.pi * self.const
        if t <= self.t0:
            return self.end[0]
        if t >= self.t1:
            return self.end[1]
        return float(self.spline(t))


def _observables(sys, psi, blocks_pop, idx, level_of, occ):
    """Level populations, per-mode occupation and trace from the cascade state."""
    d = int(level_of.max()) + 1
    pops = np.abs(psi) ** 2
    for k, diag in blocks_pop.items():
        pops[idx[k]] += diag
    levels = np.bincount(level_of, weights=pops, minlength=d)
    modes = pops @ occ
    return levels, modes, float(pops.sum())


# -- engines -------------------------------------------------------------------

def _evolve_cascade(sys, drive, psi0, t_out, tol, track_blocks):
    h = _frame_hamiltonian(sys)
    loss = sum((rate * (op.getH() @ op) for op, rate in sys.collapse_ops),
               sp.csr_matrix(h.shape, dtype=complex))
    h_eff = (h - 0.5j * loss).tocsr()
    dvec = sys.h_qubit_detune.diagonal().real
    drv = _Drive(drive)

    present = np.flatnonzero(np.abs(psi0) > 0)
    n_top = int(sys.excitations[present].max()) if len(present) else 0
    idx, jumps = _manifold_blocks(sys, n_top)
    dims = [len(i) for i in idx]
    # blocks for manifolds 1..n_top-1 are dense; manifold 0 is the scalar vacuum
    block_ks = list(range(n_top)) if track_blocks else []
    blk_h = {}
    for k in block_ks:
        sub = idx[k]
        blk_h[k] = (h_eff[sub][:, sub].toarray(), dvec[sub])

    d_psi = sys.dim
    offsets, pos = {}, d_psi
    for k in block_ks:
        offsets[k] = pos
        pos += dims[k] ** 2
    leak_pos = pos
    size = pos + 1

    def rhs(t, y):
        w = drv(t)
        psi = y[:d_psi]
        out = np.empty_like(y)
        out[:d_psi] = -1j * (h_eff @ psi + w * dvec * psi)
        flux = 0.0
        feeds = {}
        for k in range(1, n_top + 1):
            pk = psi[idx[k]]
            for lop in jumps[k - 1]:
                v = lop @ pk
                flux += float(np.vdot(v, v).real)
                if track_blocks:
                    feeds[k - 1] = feeds.get(k - 1, 0) + np.outer(v, v.conj())
        for k in reversed(block_ks):
            n = dims[k]
            rho = y[offsets[k]:offsets[k] + n * n].reshape(n, n)
            hk, dk = blk_h[k]
            hk_t = hk + np.diag(w * dk)
            drho = -1j * (hk_t @ rho - rho @ hk_t.conj().T)
            if k in feeds:
                drho = drho + feeds[k]
            if k >= 1:
                for lop in jumps[k - 1]:
                    lr = lop @ rho
                    add = lr @ lop.conj().T
                    flux += float(np.trace(add).real)
                    feeds[k - 1] = feeds.get(k - 1, 0) + add
            out[offsets[k]:offsets[k] + n * n] = drho.ravel()
        out[leak_pos] = flux
        return out

    y0 = np.zeros(size, dtype=complex)
    y0[:d_psi] = psi0
    t_span = (float(t_out[0]), float(t_out[-1]))
    if t_span[1] > t_span[0]:
        # solve_ivp controls an RMS error norm; tighten it so the per-component
        # error stays near tol for large state vectors
        tight = tol / math.sqrt(size)
        sol = solve_ivp(rhs, t_span, y0, method="DOP853", t_eval=t_out, rtol=tight, atol=tight)
        if not sol.success:
            raise ToleranceNotMet(sol.message)
        ys = sol.y.T
    else:
        ys = y0[None, :]

    level_of = sys.atom_levels
    occ = sys.mode_occupations
    n_t = len(ys)
    d = max(int(level_of.max()) + 1, 3)
    levels = np.zeros((n_t, d))
    modes = np.zeros((n_t, sys.n_modes))
    norm = np.zeros(n_t)
    leaked = np.zeros(n_t)
    for i, y in enumerate(ys):
        psi = y[:d_psi]
        bp = {}
        for k in block_ks:
            n = dims[k]
            bp[k] = np.diagonal(y[offsets[k]:offsets[k] + n * n].reshape(n, n)).real.copy()
        lv, md, tr = _observables(sys, psi, bp, idx, level_of, occ)
        leaked[i] = y[leak_pos].real
        norm[i] = float(np.vdot(psi, psi).real)
        if not track_blocks:
            # single excitation: every jump lands in the vacuum with the atom in g
            lv[0] += 1.0 - tr
        levels[i, :len(lv)] = lv
        modes[i] = md

    y_end = ys[-1]
    blocks = tuple(y_end[offsets[k]:offsets[k] + dims[k] ** 2].reshape(dims[k], dims[k]) for k in block_ks)
    psi_lab = y_end[:d_psi] * np.exp(-2j * math.pi * sys.frame_frequency * sys.excitations * t_out[-1])
    final = QuantumState(psi_lab, False, blocks, sys.dim)
    return EvolutionResult(np.asarray(t_out, dtype=float), levels, modes.sum(axis=1), modes, leaked, norm, final)


def _evolve_lindblad(sys, drive, rho0, t_out, tol, max_halvings=12):
    h = _frame_hamiltonian(sys).toarray()
    loss = np.zeros_like(h)
    ls = []
    for op, rate in sys.collapse_ops:
        lop = math.sqrt(rate) * op.toarray()
        ls.append(lop)
        loss += lop.conj().T @ lop
    h_eff = h - 0.5j * loss
    dvec = sys.h_qubit_detune.diagonal().real
    drv = _Drive(drive)

    def rhs(t, rho):
        ht = h_eff + np.diag(drv(t) * dvec)
        drho = -1j * (ht @ rho - rho @ ht.conj().T)
        flux = 0.0
        for lop in ls:
            jr = lop @ rho @ lop.conj().T
            drho += jr
            flux += np.trace(jr).real
        return drho, flux

    def rk4(t, rho, step):
        k1, f1 = rhs(t, rho)
        k2, f2 = rhs(t + step / 2, rho + step / 2 * k1)
        k3, f3 = rhs(t + step / 2, rho + step / 2 * k2)
        k4, f4 = rhs(t + step, rho + step * k3)
        return (rho + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4),
                step / 6 * (f1 + 2 * f2 + 2 * f3 + f4))

    w_max = abs(drv(t_out[0])) if drive is None or len(drive) < 2 else \
        2 * math.pi * float(np.max(np.abs(drive.samples)))
    omega = np.abs(np.linalg.eigvals(h_eff)).max() + np.abs(dvec).max() * w_max
    step = min(0.5 / max(omega, 1e-9), float(np.min(np.diff(t_out))) if len(t_out) > 1 else 1.0)

    level_of = sys.atom_levels
    occ = sys.mode_occupations
    d = max(int(level_of.max()) + 1, 3)
    n_t = len(t_out)
    levels = np.zeros((n_t, d))
    modes = np.zeros((n_t, sys.n_modes))
    norm = np.zeros(n_t)
    leaked = np.zeros(n_t)

    rho = rho0.astype(complex).copy()
    leak = 0.0
    t = float(t_out[0])

    def record(i):
        pops = np.diagonal(rho).real
        levels[i, :d] = np.bincount(level_of, weights=pops, minlength=d)[:d]
        modes[i] = pops @ occ
        norm[i] = pops.sum()
        leaked[i] = leak

    record(0)
    for i in range(1, n_t):
        target = float(t_out[i])
        while t < target - 1e-12:
            h_try = min(step, target - t)
            for _ in range(max_halvings + 1):
                full, fl_full = rk4(t, rho, h_try)
                half, fl_a = rk4(t, rho, h_try / 2)
                half2, fl_b = rk4(t + h_try / 2, half, h_try / 2)
                err = np.max(np.abs(half2 - full)) / 15.0
                if err <= tol:
                    break
                h_try /= 2
            else:
                raise ToleranceNotMet(f"local error {err:.3e} above tol {tol:.1e} at t = {t:.3f} ns")
            # Richardson-extrapolated step
            rho = half2 + (half2 - full) / 15.0
            leak += fl_a + fl_b
            t += h_try
            if err < tol / 50:
                step = min(step * 2, 1.0)
            else:
                step = h_try
        record(i)

    u = np.exp(-2j * math.pi * sys.frame_frequency * sys.excitations * t_out[-1])
    final = QuantumState(u[:, None] * rho * u.conj()[None, :], True, (), sys.dim)
    return EvolutionResult(np.asarray(t_out, dtype=float), levels, modes.sum(axis=1), modes, leaked, norm, final)


def evolve(
    sys: SystemOperators,
    drive: Waveform | None,
    initial: np.ndarray | QuantumState,
    method: str | None = None,
    tol: float = DEFAULT_TOL,
    t_out: np.ndarray | None = None,
    n_out: int = 201,
) -> EvolutionResult:
    """Evolve ``initial`` under the static Hamiltonian plus the frequency drive.

    Parameters
    ----------
    sys : SystemOperators
        Operators from :func:`mmreset.hilbert.assemble`.
    drive : Waveform or None
        Atom frequency shift ``delta_f(t)`` in GHz relative to the idle point.
        ``None`` means no drive; a single sample is a static shift.
    initial : ndarray or QuantumState
        Lab-frame vector (all methods) or density matrix (``lindblad_rk``).
    method : str, optional
        One of ``non_hermitian_vector``, ``manifold_cascade`` or
        ``lindblad_rk``. Default is the vector method for a single
        excitation and the cascade otherwise.
    tol : float
        Local error tolerance per step.
    t_out : array, optional
        Output grid in ns. Defaults to ``n_out`` points spanning the drive.

    Raises
    ------
    FrameAliasing
        When the drive has fewer than 20 samples per fastest frame period.
    ToleranceNotMet
        When the integrator cannot reach ``tol``.
    """
    if isinstance(initial, QuantumState):
        is_density = initial.is_density
        state = np.asarray(initial.amplitudes, dtype=complex)
    else:
        state = np.asarray(initial, dtype=complex)
        is_density = state.ndim == 2
    if state.shape[0] != sys.dim:
        raise ValueError(f"initial state has dimension {state.shape[0]}, expected {sys.dim}")

    if method is None:
        if is_density:
            method = "lindblad_rk"
        else:
            present = np.flatnonzero(np.abs(state) > 0)
            n_top = int(sys.excitations[present].max()) if len(present) else 0
            method = "non_hermitian_vector" if n_top <= 1 else "manifold_cascade"
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if not tol > 0:
        raise ValueError("tol must be positive")

    if t_out is None:
        t_end = drive.times[-1] if drive is not None and len(drive) > 1 else 0.0
        t0 = drive.t0 if drive is not None else 0.0
        t_out = np.linspace(t0, t_end, n_out)
    t_out = np.asarray(t_out, dtype=float)
    if np.any(np.diff(t_out) <= 0):
        raise ValueError("t_out must be strictly increasing")

    if drive is not None and len(drive) > 1:
        detune = np.asarray(drive.samples, dtype=float)
        f_fast = _fastest_frequency(sys, detune, drive.dt)
        if f_fast > 0 and drive.dt > 1.0 / (SAMPLES_PER_PERIOD * f_fast):
            raise FrameAliasing(
                f"drive step {drive.dt} ns is coarser than 1/(20 x {f_fast:.3f} GHz)")

    # the lab state at t0 maps to the frame state at t0 by a phase per manifold
    phase = np.exp(2j * math.pi * sys.frame_frequency * sys.excitations * t_out[0])
    if method == "lindblad_rk":
        rho = state if is_density else np.outer(state, state.conj())
        rho = phase[:, None] * rho * phase.conj()[None, :]
        return _evolve_lindblad(sys, drive, rho, t_out, tol)
    if is_density:
        raise ValueError(f"{method} needs a state vector")
    psi = phase * state
    if method == "non_hermitian_vector":
        present = np.flatnonzero(np.abs(psi) > 0)
        if len(present) and sys.excitations[present].max() > 1:
            raise ValueError("non_hermitian_vector is exact only up to one excitation; "
                             "use manifold_cascade")
        return _evolve_cascade(sys, drive, psi, t_out, tol, track_blocks=False)
    return _evolve_cascade(sys, drive, psi, t_out, tol, track_blocks=True)

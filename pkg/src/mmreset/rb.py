"""Qutrit randomized benchmarking with leakage.

Channels are 9x9 superoperators acting on row-major vectorised density
matrices, ``vec(A rho B) = (A kron B^T) vec(rho)``. Cliffords act on the g-e
block and leave ``|f>`` alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize_scalar

from .errors import FitDiverged
from .io import write_csv
from .protocols.coherence import CoherenceSet

__all__ = [
    "QutritChannel",
    "CliffordGroup",
    "RBChannels",
    "RBCurves",
    "LeakageRBFit",
    "PRIMITIVES",
    "clifford_group",
    "clifford_set",
    "decoherence_channel",
    "leakage_injection_channel",
    "lru_channel",
    "reference_channels",
    "run_rb",
    "fit_leakage_rb",
    "irb_infidelity",
    "bootstrap_lambda",
    "leakage_model",
    "survival_model",
]

PRIMITIVES = ("reference", "lru", "leak_inject", "leak_inject_lru")
DIM = 3


def _spre_post(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(a, b.T)


@dataclass(frozen=True, eq=False)
class QutritChannel:
    superop: np.ndarray

    @classmethod
    def from_unitary(cls, u: np.ndarray) -> "QutritChannel":
        return cls(_spre_post(u, u.conj().T))

    @classmethod
    def from_kraus(cls, ops: Sequence[np.ndarray]) -> "QutritChannel":
        return cls(sum(_spre_post(k, k.conj().T) for k in ops))

    @classmethod
    def identity(cls) -> "QutritChannel":
        return cls(np.eye(DIM * DIM, dtype=complex))

    def then(self, other: "QutritChannel") -> "QutritChannel":
        """Apply ``self`` first, then ``other``."""
        return QutritChannel(other.superop @ self.superop)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return (self.superop @ rho.reshape(-1)).reshape(DIM, DIM)

    def choi(self) -> np.ndarray:
        # J = sum_ij |i><j| (x) E(|i><j|)
        s = self.superop.reshape(DIM, DIM, DIM, DIM)  # [a, b, i, j]: <a|E(|i><j|)|b>
        return s.transpose(2, 0, 3, 1).reshape(DIM * DIM, DIM * DIM)

    def trace_error(self) -> float:
        t = np.eye(DIM).reshape(-1)
        return float(np.max(np.abs(t @ self.superop - t)))

    def min_choi_eigenvalue(self) -> float:
        c = self.choi()
        return float(np.linalg.eigvalsh(0.5 * (c + c.conj().T)).min())

    def is_cptp(self, tol: float = 1e-10) -> bool:
        return self.trace_error() < tol and self.min_choi_eigenvalue() > -tol


# -- Cliffords -----------------------------------------------------------------

def _phase_key(u: np.ndarray) -> tuple:
    """Canonical form of a 2x2 unitary modulo global phase."""
    flat = u.reshape(-1)
    k = int(np.argmax(np.abs(flat) > 1e-9))
    v = flat * (abs(flat[k]) / flat[k])
    return tuple(np.round(v.real, 9)) + tuple(np.round(v.imag, 9))


@dataclass(frozen=True, eq=False)
class CliffordGroup:
    """The 24 single-qubit Cliffords with multiplication and inverse tables.

    ``table[i, j]`` is the index of ``u[i] @ u[j]`` (apply j first).
    """

    unitaries: np.ndarray          # (24, 2, 2)
    table: np.ndarray              # (24, 24)
    inverse: np.ndarray            # (24,)
    identity_index: int

    def embed(self, i: int) -> np.ndarray:
        u = np.eye(DIM, dtype=complex)
        u[:2, :2] = self.unitaries[i]
        return u

    @property
    def channels(self) -> list[QutritChannel]:
        return [QutritChannel.from_unitary(self.embed(i)) for i in range(len(self.unitaries))]


@lru_cache(maxsize=1)
def clifford_group() -> CliffordGroup:
    h = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
    s = np.array([[1, 0], [0, 1j]], dtype=complex)
    elems = [np.eye(2, dtype=complex)]
    keys = {_phase_key(elems[0]): 0}
    frontier = [elems[0]]
    while frontier:
        nxt = []
        for u in frontier:
            for g in (h, s):
                v = g @ u
                k = _phase_key(v)
                if k not in keys:
                    keys[k] = len(elems)
                    elems.append(v)
                    nxt.append(v)
        frontier = nxt
    if len(elems) != 24:
        raise RuntimeError(f"generated {len(elems)} Cliffords, expected 24")
    n = len(elems)
    table = np.empty((n, n), dtype=int)
    for i in range(n):
        for j in range(n):
            table[i, j] = keys[_phase_key(elems[i] @ elems[j])]
    inverse = np.array([int(np.flatnonzero(table[i] == 0)[0]) for i in range(n)])
    return CliffordGroup(np.array(elems), table, inverse, 0)


def clifford_set() -> list[QutritChannel]:
    return clifford_group().channels


# -- noise channels ----------------------------------------------------------------

def decoherence_channel(t_gate: float, t1: float, tphi: float, t1_ef: float) -> QutritChannel:
    """Relaxation e->g (``t1``), f->e (``t1_ef``) and pure dephasing (``tphi``).

    ``t_gate`` in ns, times in us; ``math.inf`` switches a process off. The
    dephasing operator is ``sqrt(2 / tphi) * diag(0, 1, 2)``, so the g-e and
    e-f coherences both decay at ``1 / tphi``.
    """
    if t_gate < 0:
        raise ValueError("t_gate must be >= 0")
    for name, v in (("t1", t1), ("tphi", tphi), ("t1_ef", t1_ef)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    ops = []
    lower_ge = np.zeros((DIM, DIM), dtype=complex)
    lower_ge[0, 1] = 1.0
    lower_ef = np.zeros((DIM, DIM), dtype=complex)
    lower_ef[1, 2] = 1.0
    ops.append(math.sqrt(1e-3 / t1) * lower_ge)
    ops.append(math.sqrt(1e-3 / t1_ef) * lower_ef)
    ops.append(math.sqrt(2e-3 / tphi) * np.diag([0.0, 1.0, 2.0]).astype(complex))
    eye = np.eye(DIM)
    gen = np.zeros((DIM * DIM, DIM * DIM), dtype=complex)
    for L in ops:
        ldl = L.conj().T @ L
        gen += _spre_post(L, L.conj().T) - 0.5 * _spre_post(ldl, eye) - 0.5 * _spre_post(eye, ldl)
    return QutritChannel(expm(gen * t_gate))


def leakage_injection_channel(p_leak: float) -> QutritChannel:
    """Partial e-f rotation moving a fraction ``p_leak`` of ``|e>`` into ``|f>``."""
    if not 0 <= p_leak <= 1:
        raise ValueError("p_leak must lie in [0, 1]")
    theta = 2 * math.asin(math.sqrt(p_leak))
    u = np.eye(DIM, dtype=complex)
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    u[1:, 1:] = [[c, -1j * s], [-1j * s, c]]
    return QutritChannel.from_unitary(u)


def lru_channel(residual_f: float, tau_lru: float, coh_mod: CoherenceSet) -> QutritChannel:
    """Move ``|f>`` to ``|e>`` leaving ``residual_f`` behind, then decohere the
    g-e block with the modulated coherence times for ``tau_lru`` ns.

    The phase picked up by ``|e>`` is assumed cancelled by a virtual Z.
    """
    if not 0 <= residual_f <= 1:
        raise ValueError("residual_f must lie in [0, 1]")
    k0 = np.diag([1.0, 1.0, math.sqrt(residual_f)]).astype(complex)
    k1 = np.zeros((DIM, DIM), dtype=complex)
    k1[1, 2] = math.sqrt(1.0 - residual_f)
    transfer = QutritChannel.from_kraus([k0, k1])
    return transfer.then(decoherence_channel(tau_lru, coh_mod.t1_mod, coh_mod.tphi_mod, math.inf))


# -- sequences -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RBChannels:
    """Noise attached to each sequence element."""

    clifford_noise: QutritChannel = field(default_factory=QutritChannel.identity)
    leak: QutritChannel = field(default_factory=QutritChannel.identity)
    lru: QutritChannel = field(default_factory=QutritChannel.identity)


def reference_channels(
    p_leak: float = 0.03,
    residual_f: float = 0.00285,
    tau_lru: float = 44.0,
    clifford_ns: float = 36.0,
    coh: CoherenceSet | None = None,
    t1_ef_idle: float = 4.7,
) -> RBChannels:
    """Channels with the reported coherence numbers; Cliffords idle-decohere."""
    coh = coh or CoherenceSet()
    return RBChannels(
        clifford_noise=decoherence_channel(clifford_ns, coh.t1_idle, coh.tphi_idle, t1_ef_idle),
        leak=leakage_injection_channel(p_leak),
        lru=lru_channel(residual_f, tau_lru, coh),
    )


@dataclass(frozen=True, eq=False)
class RBCurves:
    primitive: str
    depths: np.ndarray
    p_g: np.ndarray
    p_e: np.ndarray
    p_f: np.ndarray
    stderr: np.ndarray          # (n_depths, 3)
    per_sequence: np.ndarray    # (n_sequences, n_depths, 3)
    n_sequences: int
    n_shots: int | None
    seed: int

    def to_csv(self, path: str | Path) -> Path:
        rows = [(int(n), g, e, f, *se) for n, g, e, f, se in
                zip(self.depths, self.p_g, self.p_e, self.p_f, self.stderr)]
        return write_csv(path, ["depth", "p_g", "p_e", "p_f", "stderr_g", "stderr_e", "stderr_f"], rows)


def _sequence(args):
    primitive, depths, channels, seed, n_shots = args
    group = clifford_group()
    cliff = [QutritChannel.from_unitary(group.embed(i)).then(channels.clifford_noise).superop
             for i in range(len(group.unitaries))]
    extra = {
        "reference": [],
        "lru": [channels.lru.superop],
        "leak_inject": [channels.leak.superop],
        "leak_inject_lru": [channels.leak.superop, channels.lru.superop],
    }[primitive]
    rng = np.random.default_rng(seed)
    n_max = int(max(depths))
    draws = rng.integers(0, len(group.unitaries), size=n_max)
    want = set(int(d) for d in depths)
    rho = np.zeros(DIM * DIM, dtype=complex)
    rho[0] = 1.0
    net = group.identity_index
    pops = {}
    # depths share the prefix of one random sequence; the recovery is appended per depth
    if 0 in want:
        pops[0] = _recover(rho, cliff, group, net)
    for n in range(1, n_max + 1):
        c = int(draws[n - 1])
        rho = cliff[c] @ rho
        for s in extra:
            rho = s @ rho
        net = group.table[c, net]
        if n in want:
            pops[n] = _recover(rho, cliff, group, net)
    out = np.array([pops[int(d)] for d in depths])
    if n_shots:
        out = np.array([rng.multinomial(n_shots, np.clip(p, 0, None) / np.clip(p, 0, None).sum()) / n_shots
                        for p in out])
    return out


def _recover(rho, cliff, group, net):
    final = cliff[group.inverse[net]] @ rho
    return np.real(final[[0, 4, 8]])


def run_rb(
    primitive: str,
    depths: Sequence[int],
    n_sequences: int,
    channels: RBChannels | None = None,
    seed: int = 0,
    n_shots: int | None = None,
    threads: int = 1,
) -> RBCurves:
    """Average populations after random Clifford sequences plus recovery.

    Each element is a Clifford followed by the primitive's channels: nothing
    (``reference``), the LRU, the leakage injection, or injection then LRU.
    Every sequence has its own sub-seed derived from ``seed``.
    """
    from .io import parallel_map

    if primitive not in PRIMITIVES:
        raise ValueError(f"primitive must be one of {PRIMITIVES}")
    depths = np.asarray(depths, dtype=int)
    if len(depths) == 0 or np.any(depths < 0):
        raise ValueError("depths must be a nonempty list of non-negative integers")
    if n_sequences < 1:
        raise ValueError("n_sequences must be >= 1")
    channels = channels or RBChannels()
    seeds = np.random.SeedSequence(seed).spawn(n_sequences)
    tasks = [(primitive, depths, channels, ss, n_shots) for ss in seeds]
    outcomes = parallel_map(_sequence, tasks, threads)
    for oc in outcomes:
        if not oc.ok:
            raise RuntimeError(oc.error)
    per = np.array([oc.value for oc in outcomes])
    mean = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / math.sqrt(n_sequences) if n_sequences > 1 else np.zeros_like(mean)
    return RBCurves(primitive, depths, mean[:, 0], mean[:, 1], mean[:, 2], se, per,
                    n_sequences, n_shots, seed)


# -- fitting -----------------------------------------------------------------------

@dataclass(frozen=True)
class LeakageRBFit:
    a: float
    b: float
    c: float
    lambda_1: float
    lambda_L: float
    l_inf: float
    p_f0: float
    rms: float


def leakage_model(n, l_inf, p_f0, lambda_L):
    n = np.asarray(n, dtype=float)
    return l_inf * (1 - lambda_L**n) + p_f0 * lambda_L**n


def survival_model(n, a, b, c, lambda_1, lambda_L):
    n = np.asarray(n, dtype=float)
    return a + b * lambda_1**n + c * lambda_L**n


_LAMBDA_MIN = 1e-6


def _profile(n, y, basis_of_lambda, bracket=(_LAMBDA_MIN, 1.0), grid=400):
    """Variable projection: optimise one decay, solving linear amplitudes exactly."""

    def solve(lam):
        A = basis_of_lambda(lam)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        r = A @ coef - y
        return float(r @ r), coef

    # log-spaced grid in (1 - lambda) to resolve decays close to one
    lo, hi = bracket
    gaps = np.geomspace(max(1 - hi, 1e-9), 1 - lo, grid)
    lams = 1 - gaps
    costs = [solve(l)[0] for l in lams]
    k = int(np.argmin(costs))
    a = lams[min(k + 1, grid - 1)]
    b = lams[max(k - 1, 0)]
    if b > a:
        res = minimize_scalar(lambda l: solve(l)[0], bounds=(a, b), method="bounded",
                              options={"xatol": 1e-13})
        lam = float(res.x) if res.fun <= costs[k] else float(lams[k])
    else:
        lam = float(lams[k])
    return lam, solve(lam)[1]


def fit_leakage_rb(curves: RBCurves) -> LeakageRBFit:
    """Fit the leakage-accumulation and survival models.

    The leakage decay is fitted first from ``P_f``; the survival curve is
    then fitted with that decay held fixed. Both stages profile out the
    linear amplitudes. When no leakage is present ``lambda_L = 1`` and
    ``c = 0``.
    """
    order = np.argsort(curves.depths, kind="stable")
    n = np.asarray(curves.depths, dtype=float)[order]
    pf = np.asarray(curves.p_f, dtype=float)[order]
    pg = np.asarray(curves.p_g, dtype=float)[order]
    if len(np.unique(n)) < 4:
        raise ValueError("need at least four distinct depths")

    if np.max(np.abs(pf)) < 1e-12:
        lam_l, l_inf, p_f0 = 1.0, 0.0, 0.0
        leak_fit = np.zeros_like(pf)
    else:
        lam_l, coef = _profile(n, pf, lambda lam: np.column_stack([1 - lam**n, lam**n]),
                               bracket=(_LAMBDA_MIN, 1.0 - 1e-12))
        l_inf, p_f0 = float(coef[0]), float(coef[1])
        leak_fit = leakage_model(n, l_inf, p_f0, lam_l)

    if lam_l >= 1.0 - 1e-12:
        lam_1, coef = _profile(n, pg, lambda lam: np.column_stack([np.ones_like(n), lam**n]))
        a, b, c = float(coef[0]), float(coef[1]), 0.0
    else:
        lam_1, coef = _profile(n, pg, lambda lam: np.column_stack([np.ones_like(n), lam**n, lam_l**n]))
        a, b, c = (float(x) for x in coef)
    surv_fit = survival_model(n, a, b, c, lam_1, lam_l)
    r = np.concatenate([surv_fit - pg, leak_fit - pf])
    rms = float(np.sqrt(np.mean(r * r)))
    if rms > 0.05:
        raise FitDiverged(f"leakage RB fit residual RMS {rms:.3g} exceeds 0.05")
    return LeakageRBFit(a, b, c, lam_1, lam_l, l_inf, p_f0, rms)


def irb_infidelity(ref_fit: LeakageRBFit, interleaved_fit: LeakageRBFit, d: int = 2) -> float:
    """Interleaved-RB error ``(1 - lambda_int / lambda_ref) (d - 1) / d``."""
    return (1.0 - interleaved_fit.lambda_1 / ref_fit.lambda_1) * (d - 1) / d


def bootstrap_lambda(curves: RBCurves, n_boot: int = 200, seed: int = 0) -> np.ndarray:
    """``lambda_1`` refitted on sequence-resampled curves."""
    rng = np.random.default_rng(seed)
    per = curves.per_sequence
    out = []
    for _ in range(n_boot):
        idx = rng.integers(0, per.shape[0], size=per.shape[0])
        m = per[idx].mean(axis=0)
        boot = RBCurves(curves.primitive, curves.depths, m[:, 0], m[:, 1], m[:, 2],
                        curves.stderr, per[idx], curves.n_sequences, curves.n_shots, curves.seed)
        try:
            out.append(fit_leakage_rb(boot).lambda_1)
        except FitDiverged:
            continue
    return np.asarray(out)

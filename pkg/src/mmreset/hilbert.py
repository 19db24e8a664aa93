"""Excitation-truncated basis, sparse operators and chain diagnostics.

Chain modes are the bare cells (site basis), so the atom couples to a single
mode and the end damping acts on the first and last cells. Mode index ``i``
is cell ``i + 1``; an enabled readout resonator is appended as the last mode.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, OutOfBand
from .flux import tuning_curve
from .model import DeviceConfig, WaveguideParams, validate

__all__ = [
    "BasisIndex",
    "SystemOperators",
    "basis_size",
    "enumerate_basis",
    "assemble",
    "chain_eigenmodes",
    "free_spectral_range",
    "taper_kappa",
    "round_trip_time",
    "dressed_state",
    "operator_entries",
    "write_operator_csv",
    "MAX_STATES",
]

MAX_STATES = 2_000_000


class BasisIndex(NamedTuple):
    atom_level: int
    photons: tuple[tuple[int, int], ...]  # sorted (mode, occupation) pairs

    @property
    def total_excitations(self) -> int:
        return self.atom_level + sum(n for _, n in self.photons)

    @property
    def photon_occupations(self) -> dict[int, int]:
        return dict(self.photons)


def _n_occupations(n_modes: int, n_photons: int) -> int:
    return math.comb(n_photons + n_modes - 1, n_modes - 1)


def basis_size(d: int, n_modes: int, n_exc: int) -> int:
    return sum(_n_occupations(n_modes, n - a)
               for n in range(n_exc + 1) for a in range(min(d - 1, n) + 1))


def enumerate_basis(d: int, n_modes: int, n_exc: int, max_states: int = MAX_STATES) -> list[BasisIndex]:
    """All states with at most ``n_exc`` excitations.

    Ordered by total excitations, then atom level, then photon occupation
    vectors in descending lexicographic order (lowest mode filled first).
    """
    if d < 2 or n_modes < 1 or n_exc < 0:
        raise ValueError("need d >= 2, n_modes >= 1, n_exc >= 0")
    count = basis_size(d, n_modes, n_exc)
    if count > max_states:
        raise CapacityError(f"{count} states exceed the budget of {max_states}")
    states = []
    for n in range(n_exc + 1):
        for a in range(min(d - 1, n) + 1):
            for modes in combinations_with_replacement(range(n_modes), n - a):
                occ: dict[int, int] = {}
                for m in modes:
                    occ[m] = occ.get(m, 0) + 1
                states.append(BasisIndex(a, tuple(sorted(occ.items()))))
    return states


def _lowering_photon(basis: list[BasisIndex], index: dict, mode: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for j, s in enumerate(basis):
        occ = s.photon_occupations
        n = occ.get(mode, 0)
        if n == 0:
            continue
        if n == 1:
            del occ[mode]
        else:
            occ[mode] = n - 1
        rows.append(index[(s.atom_level, tuple(sorted(occ.items())))])
        cols.append(j)
        vals.append(math.sqrt(n))
    dim = len(basis)
    return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=complex)


def _lowering_atom(basis: list[BasisIndex], index: dict) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for j, s in enumerate(basis):
        if s.atom_level == 0:
            continue
        rows.append(index[(s.atom_level - 1, s.photons)])
        cols.append(j)
        vals.append(math.sqrt(s.atom_level))
    dim = len(basis)
    return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=complex)


@dataclass(frozen=True, eq=False)
class SystemOperators:
    """Lab-frame operators in angular units (rad/ns).

    ``collapse_ops`` pairs each jump operator with its energy decay rate in
    1/ns. ``h_qubit_detune`` multiplies the angular frequency shift of the
    atom, ``2 pi * delta_f(t)``.
    """

    h_static: sp.csr_matrix
    h_qubit_detune: sp.csr_matrix
    collapse_ops: tuple[tuple[sp.csr_matrix, float], ...]
    basis: tuple[BasisIndex, ...]
    n_modes: int
    n_exc: int
    atom_frequency: float
    frame_frequency: float

    @property
    def dim(self) -> int:
        return len(self.basis)

    @property
    def atom_levels(self) -> np.ndarray:
        return np.array([s.atom_level for s in self.basis])

    @property
    def excitations(self) -> np.ndarray:
        return np.array([s.total_excitations for s in self.basis])

    @property
    def mode_occupations(self) -> np.ndarray:
        """(dim, n_modes) photon number of each basis state per mode."""
        occ = np.zeros((self.dim, self.n_modes))
        for i, s in enumerate(self.basis):
            for m, n in s.photons:
                occ[i, m] = n
        return occ

    def index_of(self, state: BasisIndex) -> int:
        return self._index[(state.atom_level, state.photons)]

    def state_of(self, i: int) -> BasisIndex:
        return self.basis[i]

    @property
    def _index(self) -> dict:
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {(s.atom_level, s.photons): i for i, s in enumerate(self.basis)}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def bare_index(self, atom_level: int) -> int:
        return self.index_of(BasisIndex(atom_level, ()))


@lru_cache(maxsize=16)
def assemble(config: DeviceConfig, n_exc: int, phi_bias: float = 0.0) -> SystemOperators:
    """Atom + open chain (+ optional readout mode) on the truncated space.

    The atom idles at ``tuning_curve(phi_bias)`` with a flux-independent
    anharmonicity and ladder elements ``sqrt(j)``.
    """
    validate(config).raise_if_invalid()
    tm, wg = config.transmon, config.waveguide
    ro = config.readout_resonator
    n_modes = wg.n_cells + (1 if ro is not None else 0)
    basis = enumerate_basis(tm.levels_d, n_modes, n_exc)
    index = {(s.atom_level, s.photons): i for i, s in enumerate(basis)}
    dim = len(basis)
    two_pi = 2 * math.pi

    f_q = float(tuning_curve(tm, phi_bias))
    eta = tm.anharmonicity_eta
    mode_freq = np.full(n_modes, wg.f_cell)
    if ro is not None:
        mode_freq[-1] = ro.f_r

    diag = np.empty(dim)
    for i, s in enumerate(basis):
        j = s.atom_level
        e = j * f_q + 0.5 * eta * j * (j - 1)
        e += sum(n * mode_freq[m] for m, n in s.photons)
        diag[i] = two_pi * e
    h = sp.diags(diag).astype(complex).tocsr()

    b = [_lowering_photon(basis, index, m) for m in range(n_modes)]
    a = _lowering_atom(basis, index)

    for x in range(wg.n_cells - 1):
        hop = b[x].getH() @ b[x + 1]
        h = h + two_pi * wg.hopping_J * (hop + hop.getH())
    x0 = wg.coupling_site_x0 - 1
    ex = a.getH() @ b[x0]
    h = h + two_pi * wg.g_uc * (ex + ex.getH())
    if ro is not None:
        r = n_modes - 1
        ex = a.getH() @ b[r]
        h = h + two_pi * ro.g_qr * (ex + ex.getH())
        hop = b[ro.site - 1].getH() @ b[r]
        h = h + two_pi * ro.g_wr * (hop + hop.getH())

    detune = sp.diags(np.array([float(s.atom_level) for s in basis])).astype(complex).tocsr()

    collapse = []
    if wg.kappa_left > 0:
        collapse.append((b[0], two_pi * wg.kappa_left))
    if wg.kappa_right > 0:
        collapse.append((b[wg.n_cells - 1], two_pi * wg.kappa_right))
    if ro is not None and ro.kappa > 0:
        collapse.append((b[-1], two_pi * ro.kappa))

    h = h.tocsr()
    h.sum_duplicates()
    frame = 0.5 * (f_q + wg.f_cell)
    return SystemOperators(h, detune, tuple(collapse), tuple(basis), n_modes, n_exc, f_q, frame)


def dressed_state(sys: SystemOperators, atom_level: int) -> np.ndarray:
    """Eigenvector of ``h_static`` with the largest overlap on ``|level, vac>``.

    The search is restricted to the excitation manifold of the bare state;
    the phase is fixed so the bare-state amplitude is real and positive.
    """
    target = sys.bare_index(atom_level)
    manifold = np.flatnonzero(sys.excitations == atom_level)
    block = sys.h_static[manifold][:, manifold].toarray()
    _, vecs = np.linalg.eigh(block)
    local = int(np.flatnonzero(manifold == target)[0])
    k = int(np.argmax(np.abs(vecs[local, :])))
    v = vecs[:, k]
    v = v * (abs(v[local]) / v[local])
    psi = np.zeros(sys.dim, dtype=complex)
    psi[manifold] = v
    return psi


def chain_eigenmodes(wg: WaveguideParams) -> tuple[np.ndarray, np.ndarray]:
    """Open-chain mode frequencies (ascending) and mode vectors as columns."""
    n = wg.n_cells
    k = np.arange(n, 0, -1)
    freqs = wg.f_cell + 2 * wg.hopping_J * np.cos(np.pi * k / (n + 1))
    x = np.arange(1, n + 1)
    vecs = np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(x, k) / (n + 1))
    return freqs, vecs


def free_spectral_range(wg: WaveguideParams) -> float:
    """Mean mode spacing ``4 J / N`` over the passband (GHz).

    Near band centre the open-chain spacing is larger by about ``pi / 2``.
    """
    if wg.n_cells < 2:
        raise ValueError("need at least two cells")
    return 4.0 * wg.hopping_J / wg.n_cells


def taper_kappa(f0: float, c_coupling: float, c_total: float, z_env: float = 50.0) -> float:
    """Energy decay ``kappa/2pi`` (GHz) of an LC loaded through a coupling capacitor.

    Capacitances in fF, impedance in ohm; small-coupling limit
    ``kappa = omega0^2 Z Cc^2 / C_total``.
    """
    if not c_total > c_coupling > 0:
        raise ValueError("need c_total > c_coupling > 0")
    w0 = 2 * math.pi * f0 * 1e9
    kappa = w0**2 * z_env * (c_coupling * 1e-15) ** 2 / (c_total * 1e-15)
    return kappa / (2 * math.pi) / 1e9


def round_trip_time(wg: WaveguideParams, f: float) -> float:
    """Time (ns) for a wavepacket at ``f`` to cross the chain and return."""
    x = (f - wg.f_cell) / (2 * wg.hopping_J)
    if not -1.0 < x < 1.0:
        raise OutOfBand(f"{f} GHz is outside the open passband {wg.passband}")
    v_group = 2 * math.pi * 2 * wg.hopping_J * math.sqrt(1.0 - x * x)
    return 2 * wg.n_cells / v_group


def operator_entries(op: sp.spmatrix) -> list[tuple[int, int, complex]]:
    coo = sp.coo_matrix(op)
    order = np.lexsort((coo.col, coo.row))
    return [(int(coo.row[i]), int(coo.col[i]), complex(coo.data[i])) for i in order]


def write_operator_csv(op: sp.spmatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "re", "im"])
        for r, c, v in operator_entries(op):
            w.writerow([r, c, repr(v.real), repr(v.imag)])

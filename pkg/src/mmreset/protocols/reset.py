"""Unconditional reset by flux modulation: traces, parameter sweeps, tau_eps."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import __version__
from ..dynamics import evolve, initial_state, thermal_population
from ..flux import Waveform, synthesize_pulse, tuning_curve
from ..hilbert import assemble
from ..io import parallel_map, utc_now, write_csv, write_json
from ..model import DeviceConfig, FluxPulse, config_hash, validate

__all__ = [
    "PREPARED_LEVELS",
    "SweepResult",
    "reset_drive",
    "simulate_reset_trace",
    "sweep_reset",
    "tau_epsilon",
]

PREPARED_LEVELS = {"g": 0, "e": 1, "f": 2}
_OBSERVABLES = ("error", "p_g", "p_e", "p_f")


def reset_drive(config: DeviceConfig, pulse: FluxPulse) -> Waveform:
    """Atom frequency shift (GHz) produced by ``pulse`` relative to its idle bias."""
    wave = synthesize_pulse(pulse)
    tm = config.transmon
    shift = tuning_curve(tm, wave.samples) - tuning_curve(tm, pulse.phi_bias)
    return Waveform(wave.t0, wave.dt, shift)


def simulate_reset_trace(
    config: DeviceConfig,
    pulse: FluxPulse,
    prepared: str,
    tau_grid: Sequence[float],
    include_floor: bool = True,
    observable: str = "error",
    tol: float = 1e-8,
    method: str | None = None,
) -> np.ndarray:
    """Reset error ``1 - P_g`` at the end of pulses of each length in ``tau_grid``.

    Every pulse length is synthesised and simulated separately, so the
    falling edge always sits at the end. The thermal floor at the idle
    frequency is added to the error and the sum clipped to one.
    ``observable`` may instead select a raw end-of-pulse population.
    """
    if prepared not in PREPARED_LEVELS:
        raise ValueError(f"prepared must be one of {sorted(PREPARED_LEVELS)}")
    if observable not in _OBSERVABLES:
        raise ValueError(f"observable must be one of {_OBSERVABLES}")
    level = PREPARED_LEVELS[prepared]
    if level >= config.transmon.levels_d:
        raise ValueError(f"level {prepared!r} is outside the {config.transmon.levels_d}-level atom")
    validate(pulse).raise_if_invalid()
    sys = assemble(config, max(level, 1), pulse.phi_bias)
    psi0 = initial_state(sys, level)
    floor = thermal_population(sys.atom_frequency, config.thermal_temperature) if include_floor else 0.0

    out = []
    for tau in tau_grid:
        p = dataclasses.replace(pulse, tau_pulse=float(tau))
        drive = reset_drive(config, p)
        t_end = drive.times[-1]
        if t_end <= 0:
            res_pops = np.abs(psi0) ** 2
            levels = np.bincount(sys.atom_levels, weights=res_pops, minlength=3)
        else:
            res = evolve(sys, drive, psi0, method=method, tol=tol, t_out=np.array([0.0, t_end]))
            levels = np.zeros(3)
            levels[:res.level_populations.shape[1]] = res.level_populations[-1]
        if observable == "error":
            out.append(min(1.0, max(0.0, 1.0 - levels[0]) + floor))
        else:
            out.append(float(levels[("p_g", "p_e", "p_f").index(observable)]))
    return np.asarray(out)


def tau_epsilon(tau_grid: Sequence[float], errors: Sequence[float], epsilon: float) -> float | None:
    """Shortest grid duration beyond which the error stays below ``epsilon``."""
    tau = np.asarray(tau_grid, dtype=float)
    err = np.asarray(errors, dtype=float)
    if len(tau) != len(err):
        raise ValueError("tau_grid and errors differ in length")
    if len(tau) and np.any(np.diff(tau) < 0):
        raise ValueError("tau_grid must be sorted")
    k = len(err)
    while k > 0 and err[k - 1] < epsilon:
        k -= 1
    return None if k == len(err) else float(tau[k])


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Reset error over an (f_mod, phi_A) grid per prepared state.

    ``values[state][i, j]`` belongs to ``axis_f_mod[i]`` and ``axis_phi_a[j]``;
    failed points hold ``nan`` and their message in ``status``.
    """

    axis_f_mod: np.ndarray
    axis_phi_a: np.ndarray
    tau_pulse: float
    values: dict[str, np.ndarray]
    status: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def save(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = [("f_mod", i, v) for i, v in enumerate(self.axis_f_mod)]
        rows += [("phi_a", j, v) for j, v in enumerate(self.axis_phi_a)]
        paths = [write_csv(out / "axes.csv", ["axis", "index", "value"], rows)]
        for state, arr in self.values.items():
            st = self.status[state]
            rows = [(i, j, self.axis_f_mod[i], self.axis_phi_a[j], arr[i, j], st[i, j])
                    for i in range(arr.shape[0]) for j in range(arr.shape[1])]
            paths.append(write_csv(out / f"values_{state}.csv",
                                   ["i_f_mod", "j_phi_a", "f_mod_ghz", "phi_a", "reset_error", "status"], rows))
        return paths


def _sweep_point(args):
    config, pulse, state, tol = args
    return float(simulate_reset_trace(config, pulse, state, [pulse.tau_pulse], tol=tol)[0])


def sweep_reset(
    config: DeviceConfig,
    f_mod_grid: Sequence[float],
    phi_a_grid: Sequence[float],
    tau_pulse: float,
    prepared_states: Sequence[str] = ("e",),
    pulse: FluxPulse | None = None,
    threads: int = 1,
    tol: float = 1e-8,
) -> SweepResult:
    """End-of-pulse reset error over the modulation grid.

    Grid points are independent and run through a process pool; outputs are
    gathered by grid index so they do not depend on the worker count.
    """
    if len(f_mod_grid) == 0 or len(phi_a_grid) == 0:
        raise ValueError("grids must be nonempty")
    for s in prepared_states:
        if s not in PREPARED_LEVELS:
            raise ValueError(f"unknown prepared state {s!r}")
    validate(config).raise_if_invalid()
    base = dataclasses.replace(pulse or FluxPulse(), tau_pulse=float(tau_pulse))
    started = time.perf_counter()
    tasks, keys = [], []
    for s in prepared_states:
        for i, fm in enumerate(f_mod_grid):
            for j, pa in enumerate(phi_a_grid):
                tasks.append((config, dataclasses.replace(base, f_mod=float(fm), phi_amplitude=float(pa)), s, tol))
                keys.append((s, i, j))
    outcomes = parallel_map(_sweep_point, tasks, threads)
    shape = (len(f_mod_grid), len(phi_a_grid))
    values = {s: np.full(shape, np.nan) for s in prepared_states}
    status = {s: np.full(shape, "ok", dtype=object) for s in prepared_states}
    for (s, i, j), oc in zip(keys, outcomes):
        if oc.ok:
            values[s][i, j] = oc.value
        else:
            status[s][i, j] = oc.error
    meta = {
        "config_hash": config_hash(config),
        "seed": config.rng_seed,
        "timestamp": utc_now(),
        "wall_time_s": time.perf_counter() - started,
        "tool_version": __version__,
        "tau_pulse_ns": float(tau_pulse),
        "n_failed": int(sum(not oc.ok for oc in outcomes)),
    }
    return SweepResult(np.asarray(f_mod_grid, float), np.asarray(phi_a_grid, float), float(tau_pulse),
                       values, status, meta)


def write_sweep_manifest(result: SweepResult, out_dir: str | Path, paths: list[Path]) -> Path:
    data = dict(result.metadata)
    data["outputs"] = [p.name for p in paths]
    return write_json(Path(out_dir) / "manifest.json", data)

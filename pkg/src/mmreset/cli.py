"""Command-line front end.

Every subcommand reads an optional TOML config, writes plot-ready tables and a
``manifest.json`` with provenance into ``--out``, and exits with 0 on success,
2 on configuration or validation errors and 3 on runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .errors import ConfigError
from .io import default_threads, utc_now, write_csv, write_json, THREADS_ENV
from .model import DeviceConfig, FluxPulse, config_hash, read_config_file, validate

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

SECTIONS = ("sweep", "pulse", "lru", "lzs", "rb", "readout", "microwave")

DEFAULTS: dict[str, dict[str, Any]] = {
    "pulse": {"tau_buffer": 2.0, "sigma_filter": 1.0, "dt_sample": 0.01, "phi_bias": 0.0},
    "sweep": {"f_mod": "0.05:0.4:20", "phi_a": "0.05:0.3:20", "tau_pulse": 60.0,
              "prepared": ["g", "e"], "tol": 1e-8},
    "lru": {"f_mod": "0.15:0.21:7", "phi_a": "0.1:0.16:7", "tau": "5:120:116",
            "f_mod_trace": 0.179, "phi_a_trace": 0.13,
            "backend": "analytic", "g_l": 0.0467, "f_l": 6.93, "kappa_l": 0.0176, "p_ss": 0.0015,
            "resonant": True},
    "lzs": {"g_coupling": 0.0236, "p0": 1.0, "f_cross": 7.1, "phi_amplitude": 0.2,
            "sigma": "0:15:16", "tau_pulse": 220.0, "tau_buffer": 60.0},
    "rb": {"primitive": "all", "depths": [0, 1, 2, 5, 10, 20, 40, 70, 100, 150, 200, 300],
           "n_sequences": 100, "n_shots": 0, "p_leak": 0.03, "residual_f": 0.00285,
           "tau_lru": 44.0, "clifford_ns": 36.0, "noiseless": False},
    "readout": {"counts": 20000, "diagonal": [0.97, 0.94, 0.92], "target": 0.9999,
                "targets": [0.9, 0.99, 0.999, 0.9999]},
    "microwave": {"hopping_J": 0.1, "g": 0.25, "eta": -0.25, "delta": -0.4,
                  "omega_drive_amp": 0.0, "g_tilde": 0.025, "n_cells": 50},
}


class _Run:
    """Collects outputs and status for the manifest."""

    def __init__(self, args, config: DeviceConfig, section: dict):
        self.args = args
        self.config = config
        self.section = section
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.tasks: dict[str, str] = {}
        self.results: dict[str, Any] = {}
        self.started = utc_now()
        self.t0 = time.perf_counter()

    @property
    def seed(self) -> int:
        return self.config.rng_seed

    def table(self, stem: str, header, rows) -> None:
        rows = list(rows)
        if self.args.format == "json":
            recs = [dict(zip(header, (_plain(v) for v in r))) for r in rows]
            path = write_json(self.out / f"{stem}.json", {"columns": list(header), "rows": recs})
        else:
            path = write_csv(self.out / f"{stem}.csv", header, rows)
        self.outputs.append(path.name)

    def manifest(self) -> Path:
        data = {
            "subcommand": self.args.command,
            "config_hash": config_hash(self.config),
            "seed": self.seed,
            "tool_version": __version__,
            "started": self.started,
            "finished": utc_now(),
            "wall_time_s": time.perf_counter() - self.t0,
            "outputs": sorted(self.outputs),
            "tasks": self.tasks,
            "results": self.results,
            "parameters": self.section,
        }
        return write_json(self.out / "manifest.json", data)


def _plain(v):
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def _grid(spec, name: str) -> np.ndarray:
    """Grid from a list of numbers or a ``start:stop:num`` string."""
    if isinstance(spec, str):
        parts = spec.split(":")
        if len(parts) == 3:
            try:
                a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
            except ValueError as exc:
                raise ConfigError(f"{name}: bad grid {spec!r}") from exc
            if n < 1:
                raise ConfigError(f"{name}: grid is empty")
            return np.linspace(a, b, n)
        try:
            vals = [float(x) for x in spec.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"{name}: bad grid {spec!r}") from exc
    elif isinstance(spec, (list, tuple)):
        vals = spec
    elif isinstance(spec, (int, float)):
        vals = [spec]
    else:
        raise ConfigError(f"{name}: expected a list or 'start:stop:num'")
    arr = np.asarray(vals, dtype=float)
    if arr.size == 0:
        raise ConfigError(f"{name}: grid is empty")
    return arr


def _section(extras: dict, name: str, overrides: dict) -> dict:
    table = dict(DEFAULTS[name])
    given = extras.get(name, {})
    if not isinstance(given, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = sorted(set(given) - set(table))
    if unknown:
        raise ConfigError(f"[{name}]: unknown keys {unknown}")
    table.update(given)
    table.update({k: v for k, v in overrides.items() if v is not None})
    return table


def _pulse(extras: dict) -> FluxPulse:
    p = _section(extras, "pulse", {})
    pulse = FluxPulse(tau_buffer=float(p["tau_buffer"]), sigma_filter=float(p["sigma_filter"]),
                      dt_sample=float(p["dt_sample"]), phi_bias=float(p["phi_bias"]))
    validate(pulse).raise_if_invalid()
    return pulse


# -- subcommands -------------------------------------------------------------------

def cmd_sweep_reset(run: _Run, extras: dict) -> None:
    from .protocols.reset import sweep_reset

    s = run.section
    fm, pa = _grid(s["f_mod"], "sweep.f_mod"), _grid(s["phi_a"], "sweep.phi_a")
    prepared = list(s["prepared"]) if not isinstance(s["prepared"], str) else s["prepared"].split(",")
    result = sweep_reset(run.config, fm, pa, float(s["tau_pulse"]), prepared,
                         pulse=_pulse(extras), threads=run.args.threads, tol=float(s["tol"]))
    rows = [("f_mod", i, v) for i, v in enumerate(fm)] + [("phi_a", j, v) for j, v in enumerate(pa)]
    run.table("axes", ["axis", "index", "value"], rows)
    for state in prepared:
        vals, st = result.values[state], result.status[state]
        run.table(f"values_{state}", ["i_f_mod", "j_phi_a", "f_mod_ghz", "phi_a", "reset_error", "status"],
                  [(i, j, fm[i], pa[j], vals[i, j], st[i, j]) for i in range(len(fm)) for j in range(len(pa))])
        for i in range(len(fm)):
            for j in range(len(pa)):
                run.tasks[f"{state}[{i},{j}]"] = st[i, j]


def _lossy(s: dict, config: DeviceConfig):
    from .protocols.lru import LossyModeParams

    return LossyModeParams(g_l=float(s["g_l"]), f_l=float(s["f_l"]), kappa_l=float(s["kappa_l"]),
                           p_ss=float(s["p_ss"]), gamma_ef=1e-3 / config.transmon.t1_idle_ef)


def cmd_lru_scan(run: _Run, extras: dict) -> None:
    from .protocols.lru import lru_scan

    s = run.section
    fm, pa = _grid(s["f_mod"], "lru.f_mod"), _grid(s["phi_a"], "lru.phi_a")
    tau = _grid(s["tau"], "lru.tau")
    res = lru_scan(run.config, fm, pa, tau, _lossy(s, run.config), _pulse(extras),
                   backend=s["backend"], threads=run.args.threads)
    header = ["i_f_mod", "j_phi_a", "f_mod_ghz", "phi_a", "tau_lru_ns", "p_f_min", "status"]
    run.table("tau_lru", header, [(i, j, fm[i], pa[j], res.tau_lru[i, j], res.p_f_min[i, j], res.status[i, j])
                                  for i in range(len(fm)) for j in range(len(pa))])
    run.table("residual_pe", ["i_f_mod", "j_phi_a", "f_mod_ghz", "phi_a", "residual_p_e"],
              [(i, j, fm[i], pa[j], res.residual_p_e[i, j]) for i in range(len(fm)) for j in range(len(pa))])
    run.results["tau_lru_ns"] = {f"{fm[i]!r},{pa[j]!r}": _plain(res.tau_lru[i, j])
                                 for i in range(len(fm)) for j in range(len(pa))}
    for i in range(len(fm)):
        for j in range(len(pa)):
            run.tasks[f"[{i},{j}]"] = str(res.status[i, j])


def cmd_lru_trace(run: _Run, extras: dict) -> None:
    from .protocols.lru import first_local_minimum, lru_analytic_pf, lru_pulse_trace, lru_sideband
    from .protocols.reset import simulate_reset_trace

    s = run.section
    tau = _grid(s["tau"], "lru.tau")
    pulse = dataclasses.replace(_pulse(extras), f_mod=float(s["f_mod_trace"]),
                                phi_amplitude=float(s["phi_a_trace"]))
    lossy = _lossy(s, run.config)
    xi, f_sb = lru_sideband(run.config.transmon, pulse)
    if s["resonant"]:
        lossy = dataclasses.replace(lossy, f_l=f_sb)
    backend = s["backend"]
    if backend == "analytic":
        p_f = np.asarray(lru_analytic_pf(lossy, (xi, f_sb), tau))
        p_g, p_e = np.zeros_like(p_f), 1.0 - p_f
    elif backend == "pulse":
        p_f = lru_pulse_trace(lossy, run.config.transmon, pulse, tau)
        p_g, p_e = np.zeros_like(p_f), 1.0 - p_f
    elif backend == "chain":
        kw = dict(include_floor=False)
        p_g = simulate_reset_trace(run.config, pulse, "f", tau, observable="p_g", **kw)
        p_e = simulate_reset_trace(run.config, pulse, "f", tau, observable="p_e", **kw)
        p_f = simulate_reset_trace(run.config, pulse, "f", tau, observable="p_f", **kw)
    else:
        raise ConfigError("lru.backend must be 'analytic', 'pulse' or 'chain'")
    run.table("trace", ["tau_ns", "p_g", "p_e", "p_f"], zip(tau, p_g, p_e, p_f))
    found = first_local_minimum(tau, p_f)
    run.results.update({
        "backend": backend,
        "xi_abs": abs(xi),
        "f_sideband_ghz": f_sb,
        "lossy_mode": dataclasses.asdict(lossy),
        "tau_lru_ns": found[0] if found else None,
        "p_f_at_tau_lru": found[1] if found else None,
    })
    run.tasks["trace"] = "ok"


def cmd_lzs(run: _Run, extras: dict) -> None:
    from .protocols.lzs import crossing_slope, diabatic_probability, lzs_survival

    s = run.section
    base = dataclasses.replace(_pulse(extras), f_mod=0.0, phi_amplitude=float(s["phi_amplitude"]),
                               tau_pulse=float(s["tau_pulse"]), tau_buffer=float(s["tau_buffer"]))
    rows = []
    for sigma in _grid(s["sigma"], "lzs.sigma"):
        pulse = dataclasses.replace(base, sigma_filter=float(sigma))
        slope = crossing_slope(run.config.transmon, pulse, float(s["f_cross"]))
        rows.append((sigma, slope, diabatic_probability(float(s["g_coupling"]), slope),
                     lzs_survival(float(s["g_coupling"]), slope, float(s["p0"]))))
        run.tasks[f"sigma={sigma!r}"] = "ok"
    run.table("lzs", ["sigma_ns", "slope_ghz_per_ns", "p_diabatic", "p_revival"], rows)


def cmd_rb(run: _Run, extras: dict) -> None:
    from .protocols.coherence import CoherenceSet
    from .rb import PRIMITIVES, RBChannels, fit_leakage_rb, irb_infidelity, reference_channels, run_rb

    s = run.section
    tm = run.config.transmon
    prims = list(PRIMITIVES) if s["primitive"] == "all" else [s["primitive"]]
    for p in prims:
        if p not in PRIMITIVES:
            raise ConfigError(f"rb.primitive must be 'all' or one of {PRIMITIVES}")
    if s["noiseless"]:
        channels = RBChannels()
    else:
        coh = CoherenceSet(t1_idle=tm.t1_idle_ge, tphi_idle=tm.tphi_idle)
        channels = reference_channels(float(s["p_leak"]), float(s["residual_f"]), float(s["tau_lru"]),
                                  float(s["clifford_ns"]), coh, tm.t1_idle_ef)
    depths = [int(d) for d in s["depths"]]
    if not depths:
        raise ConfigError("rb.depths is empty")
    n_shots = int(s["n_shots"]) or None
    fits = {}
    for k, p in enumerate(prims):
        curves = run_rb(p, depths, int(s["n_sequences"]), channels, seed=run.seed + k,
                        n_shots=n_shots, threads=run.args.threads)
        run.table(f"rb_{p}", ["depth", "p_g", "p_e", "p_f", "stderr_g", "stderr_e", "stderr_f"],
                  [(int(n), g, e, f, *se) for n, g, e, f, se in
                   zip(curves.depths, curves.p_g, curves.p_e, curves.p_f, curves.stderr)])
        try:
            fits[p] = fit_leakage_rb(curves)
            run.results[f"fit_{p}"] = dataclasses.asdict(fits[p])
            run.tasks[p] = "ok"
        except Exception as exc:  # a failed fit leaves the curves usable
            run.tasks[p] = f"fit failed: {exc}"
    if "reference" in fits and "lru" in fits:
        run.results["irb_infidelity_lru"] = irb_infidelity(fits["reference"], fits["lru"])


def cmd_readout_calib(run: _Run, extras: dict) -> None:
    from .readout import (assignment_fidelity, estimate_confusion, herald_threshold,
                          linear_discriminant, reference_clouds, synthesize_shots)

    s = run.section
    spec = reference_clouds(tuple(float(x) for x in s["diagonal"]))
    train = synthesize_shots(spec, int(s["counts"]), run.seed)
    test = synthesize_shots(spec, int(s["counts"]), run.seed + 1)
    clf = linear_discriminant(train)
    m = estimate_confusion(test, clf)
    labels = ("g", "e", "f")
    run.table("confusion", ["assigned", "prep_g", "prep_e", "prep_f"],
              [(labels[i], *m.m[i]) for i in range(3)])
    run.table("shots", ["label", "i_r", "q_r", "i_t", "q_t"],
              [(labels[l], *p) for l, p in zip(test.labels, test.points)])
    rows = []
    for target in sorted(set(float(t) for t in s["targets"]) | {float(s["target"])}):
        acc, err = herald_threshold(clf, target).evaluate(test)
        rows.append((target, acc, err))
    run.table("herald", ["target", "acceptance", "post_selection_error"], rows)
    run.results.update({"assignment_fidelity": assignment_fidelity(m),
                        "condition_number": m.condition_number})
    run.tasks["calibration"] = "ok"


def cmd_microwave_reset(run: _Run, extras: dict) -> None:
    from .protocols.microwave import emission_rate_from_coupling, microwave_reset_estimate

    s = run.section
    est = microwave_reset_estimate(float(s["hopping_J"]), float(s["g"]), float(s["eta"]), float(s["delta"]),
                                   float(s["omega_drive_amp"]), int(s["n_cells"]))
    g_tilde = est.g_tilde
    if float(s["omega_drive_amp"]) == 0.0 and s.get("g_tilde") is not None:
        g_tilde = float(s["g_tilde"])
    gamma = emission_rate_from_coupling(g_tilde, float(s["hopping_J"]))
    rows = [("g_tilde", g_tilde, g_tilde * 1e3), ("gamma", gamma, gamma * 1e3), ("fsr", est.fsr, est.fsr * 1e3)]
    run.table("microwave", ["quantity", "value_ghz", "value_mhz"], rows)
    run.results.update({"g_tilde_ghz": g_tilde, "gamma_ghz": gamma, "fsr_ghz": est.fsr})
    run.tasks["estimate"] = "ok"
    print(f"g_tilde = {g_tilde * 1e3:.3f} MHz, Gamma = {gamma * 1e3:.3f} MHz, FSR = {est.fsr * 1e3:.3f} MHz")


COMMANDS: dict[str, tuple[str, Callable, str]] = {
    "sweep-reset": ("sweep", cmd_sweep_reset,
                    "reset error over an (f_mod, phi_A) grid. Writes axes.csv (axis, index, value) and "
                    "values_<state>.csv (i_f_mod, j_phi_a, f_mod_ghz, phi_a, reset_error, status)."),
    "lru-scan": ("lru", cmd_lru_scan,
                 "first-minimum LRU time over an (f_mod, phi_A) grid. Writes tau_lru.csv (i_f_mod, j_phi_a, "
                 "f_mod_ghz, phi_a, tau_lru_ns, p_f_min, status) and residual_pe.csv."),
    "lru-trace": ("lru", cmd_lru_trace,
                  "P_g/P_e/P_f versus pulse length at one point. Writes trace.csv (tau_ns, p_g, p_e, p_f); "
                  "backend 'analytic' (constant sideband), 'pulse' (with edges) or 'chain'."),
    "lzs": ("lzs", cmd_lzs,
            "shelving revival versus edge filter width. Writes lzs.csv (sigma_ns, slope_ghz_per_ns, "
            "p_diabatic, p_revival)."),
    "rb": ("rb", cmd_rb,
           "leakage randomized benchmarking. Writes rb_<primitive>.csv (depth, p_g, p_e, p_f, stderr_*) "
           "with fits and the iRB error in the manifest."),
    "readout-calib": ("readout", cmd_readout_calib,
                      "synthetic three-state calibration. Writes confusion.csv, shots.csv "
                      "(label, i_r, q_r, i_t, q_t) and herald.csv (target, acceptance, post_selection_error)."),
    "microwave-reset": ("microwave", cmd_microwave_reset,
                        "f0-g1 drive estimate. Writes microwave.csv (quantity, value_ghz, value_mhz)."),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML device and run configuration")
    common.add_argument("--out", type=Path, default=None, help="output directory (default ./out/<command>)")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker processes (default ${THREADS_ENV} or 1)")
    common.add_argument("--seed", type=int, default=None, help="overrides rng_seed of the config")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")

    parser = argparse.ArgumentParser(prog="mmreset", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text.split(".")[0], description=text)
        if name in ("sweep-reset", "lru-scan"):
            p.add_argument("--f-mod", dest="f_mod", help="grid: 'start:stop:num' or comma list (GHz)")
            p.add_argument("--phi-a", dest="phi_a", help="grid: 'start:stop:num' or comma list (Phi0)")
        if name == "sweep-reset":
            p.add_argument("--tau-pulse", dest="tau_pulse", type=float)
            p.add_argument("--prepared", help="comma list of g, e, f")
        if name in ("lru-scan", "lru-trace"):
            p.add_argument("--tau", help="pulse lengths: 'start:stop:num' or comma list (ns)")
            p.add_argument("--backend")
        if name == "lzs":
            p.add_argument("--sigma", help="filter widths: 'start:stop:num' or comma list (ns)")
        if name == "rb":
            p.add_argument("--primitive")
            p.add_argument("--n-sequences", dest="n_sequences", type=int)
            p.add_argument("--noiseless", action="store_true", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    section_name, func, _ = COMMANDS[args.command]
    if args.out is None:
        args.out = Path("out") / args.command
    if args.threads is None:
        args.threads = default_threads()
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.config is not None:
            config, extras = read_config_file(args.config, SECTIONS)
        else:
            config, extras = DeviceConfig(), {}
        if args.seed is not None:
            config = dataclasses.replace(config, rng_seed=args.seed)
        validate(config).raise_if_invalid()
        overrides = {k: getattr(args, k, None) for k in DEFAULTS[section_name]}
        section = _section(extras, section_name, overrides)
        for other in SECTIONS:
            if other != section_name and other != "pulse":
                _section(extras, other, {})  # reject unknown keys everywhere
        run = _Run(args, config, section)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        func(run, extras)
    except (ConfigError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    run.manifest()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

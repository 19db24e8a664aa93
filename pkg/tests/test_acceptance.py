"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (the lines appear in the terminal
summary) or ``python3 tests/test_acceptance.py`` for the lines alone.
Tolerances are fixed here and must not be relaxed.
"""

from __future__ import annotations

import dataclasses
import math
import sys
import time
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

sys.path.insert(0, str(Path(__file__).parent))
import oracles  # noqa: E402

from mmreset import cli  # noqa: E402
from mmreset.dynamics import evolve, initial_state, temperature_from_population  # noqa: E402
from mmreset.flux import sideband_spectrum, tuning_curve  # noqa: E402
from mmreset.hilbert import assemble  # noqa: E402
from mmreset.model import DeviceConfig, FluxPulse, TransmonParams  # noqa: E402
from mmreset.protocols.coherence import CoherenceSet, lru_infidelity  # noqa: E402
from mmreset.protocols.lru import (REFERENCE_LOSSY_MODE, LossyModeParams, LruTrace,  # noqa: E402
                                   first_local_minimum, fit_lossy_mode, lru_analytic_pf,
                                   lru_pulse_trace, lru_sideband)
from mmreset.protocols.lzs import crossing_slope, diabatic_probability, lzs_survival  # noqa: E402
from mmreset.protocols.microwave import emission_rate_from_coupling, microwave_reset_estimate  # noqa: E402
from mmreset.rb import (RBCurves, bootstrap_lambda, fit_leakage_rb, irb_infidelity,  # noqa: E402
                        leakage_model, reference_channels, run_rb, survival_model)
from mmreset.readout import (ConfusionMatrix, apply_confusion, assignment_fidelity,  # noqa: E402
                             estimate_confusion, herald_threshold, invert_confusion,
                             linear_discriminant, reference_clouds, synthesize_shots)

REPORT: dict[int, str] = {}

TITLES = {
    1: "microwave reset worked example",
    2: "coherence-limited LRU infidelity",
    3: "thermal round trip",
    4: "lossy-mode closed form vs RK4",
    5: "LRU speed bracket",
    6: "sideband suite",
    7: "golden rule and Purcell protection",
    8: "fit recovery",
    9: "leakage RB behaviour",
    10: "LZS limits and monotonicity",
    11: "readout suite",
    12: "CLI determinism",
}


def _record(n: int, ok: bool, detail: str, elapsed: float, limit: float) -> None:
    ok = ok and elapsed < limit
    REPORT[n] = f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {TITLES[n]}: {detail} ({elapsed:.1f} s < {limit:g} s)"
    print(REPORT[n])
    assert ok, REPORT[n]


# -- 1 ---------------------------------------------------------------------------

def test_criterion_01_microwave_reset():
    t0 = time.perf_counter()
    J, g, eta, delta, n_cells = 0.1, 0.25, -0.25, -0.4, 50
    # drive amplitude that yields a 25 MHz effective coupling, by hand
    omega = 0.025 * math.sqrt(2) * abs(delta * (delta + eta)) / abs(eta * g)
    est = microwave_reset_estimate(J, g, eta, delta, omega, n_cells)
    gamma = emission_rate_from_coupling(0.025, J)
    ok = (abs(abs(est.g_tilde) - 0.025) < 1e-12
          and abs(gamma - 0.00625) < 1e-12
          and abs(est.gamma - 0.00625) < 1e-12
          and abs(gamma - 0.0065) / 0.0065 < 0.10
          and abs(est.fsr - 0.008) < 1e-15)
    detail = f"Gamma = {gamma * 1e3:.3f} MHz, FSR = {est.fsr * 1e3:.3f} MHz"
    _record(1, ok, detail, time.perf_counter() - t0, 1.0)


# -- 2 ---------------------------------------------------------------------------

def test_criterion_02_lru_infidelity():
    t0 = time.perf_counter()
    value = lru_infidelity(44.0, 12.0, CoherenceSet(12.0, 7.3, 3.3, 3.7))
    # hand arithmetic: 12 ns idle plus 32 ns modulated, each (t/3)(1/T1 + 1/Tphi)
    by_hand = 0.012 / 3 * (1 / 12 + 1 / 7.3) + 0.032 / 3 * (1 / 3.3 + 1 / 3.7)
    ok = (abs(value - by_hand) < 1e-15
          and abs(value - 0.0070) <= 0.0002
          and abs(value - 0.0072) <= 0.0005)
    _record(2, ok, f"{value * 100:.4f} % (hand {by_hand * 100:.4f} %)", time.perf_counter() - t0, 1.0)


# -- 3 ---------------------------------------------------------------------------

def test_criterion_03_thermal_round_trip():
    t0 = time.perf_counter()
    t_hi = temperature_from_population(6.0, 0.001)
    t_lo = temperature_from_population(3.78, 0.0015)
    ok = (39 <= t_hi <= 45 and 25 <= t_lo <= 31
          and abs(t_hi - oracles.thermal_temperature_mk(6.0, 0.001)) < 1e-9
          and abs(t_lo - oracles.thermal_temperature_mk(3.78, 0.0015)) < 1e-9)
    _record(3, ok, f"{t_hi:.2f} mK at 6 GHz, {t_lo:.2f} mK at 3.78 GHz", time.perf_counter() - t0, 1.0)


# -- 4 ---------------------------------------------------------------------------

def _lossy_parameter_sets(n=20, seed=2024):
    """Half under-damped, half over-damped by construction."""
    rng = np.random.default_rng(seed)
    g = rng.uniform(0.005, 0.1, n)
    xi = rng.uniform(0.05, 0.45, n)
    g_sb = math.sqrt(2) * g * xi
    ratio = np.where(np.arange(n) % 2 == 0, rng.uniform(0.05, 0.8, n), rng.uniform(1.2, 6.0, n))
    kappa = 4 * g_sb * ratio
    delta = rng.uniform(-0.05, 0.05, n)
    gamma = rng.uniform(0.0, 1e-3, n)
    p_ss = rng.uniform(0.0, 0.01, n)
    return g, xi, delta, kappa, gamma, p_ss


def test_criterion_04_closed_form_vs_rk4():
    t0 = time.perf_counter()
    g, xi, delta, kappa, gamma, p_ss = _lossy_parameter_sets()
    t, ref = oracles.rk4_lossy_mode(g, xi, delta, kappa, gamma, p_ss)
    worst = 0.0
    for i in range(len(g)):
        p = LossyModeParams(g_l=g[i], f_l=0.0, kappa_l=kappa[i], p_ss=p_ss[i], gamma_ef=gamma[i])
        worst = max(worst, float(np.max(np.abs(lru_analytic_pf(p, (xi[i], delta[i]), t) - ref[i]))))
    _record(4, worst < 1e-6, f"max |closed form - RK4| = {worst:.2e} over 20 sets",
            time.perf_counter() - t0, 10.0)


# -- 5 ---------------------------------------------------------------------------

def test_criterion_05_lru_speed_bracket():
    t0 = time.perf_counter()
    tm = TransmonParams()
    pulse = FluxPulse(phi_amplitude=0.13, f_mod=0.179)
    xi, f_sb = lru_sideband(tm, pulse)
    lossy = dataclasses.replace(REFERENCE_LOSSY_MODE, f_l=f_sb)  # sideband tuned onto the lossy mode
    tau = np.arange(5.0, 120.0001, 0.5)
    found = first_local_minimum(tau, lru_pulse_trace(lossy, tm, pulse, tau))
    t_const = np.arange(0.0, 120.0001, 0.05)
    const = first_local_minimum(t_const, lru_analytic_pf(lossy, (xi, f_sb), t_const))
    ok = found is not None and 25 <= found[0] <= 45 and found[1] < 0.01
    detail = (f"|xi_-2| = {abs(xi):.5f}; with edges: minimum {found[1] * 100:.3f} % at {found[0]:.1f} ns; "
              f"constant coupling: {const[1] * 100:.3f} % at {const[0]:.2f} ns")
    _record(5, ok, detail, time.perf_counter() - t0, 10.0)


# -- 6 ---------------------------------------------------------------------------

SIDEBAND_CASES = [
    # bias, amplitude, f_mod, max_order
    (0.0, 0.13, 0.179, 12),
    (0.0, 0.3, 0.25, 20),
    (0.5, 0.2, 0.3, 30),
    (0.5, 0.1, 0.15, 30),
    (0.25, 0.05, 0.2, 12),
]


def test_criterion_06_sideband_suite():
    t0 = time.perf_counter()
    tm = TransmonParams()
    norm_err = odd_max = fft_vs_quad = 0.0
    for bias, amp, fm, order in SIDEBAND_CASES:
        spec = sideband_spectrum(tm, FluxPulse(phi_amplitude=amp, f_mod=fm, phi_bias=bias), max_order=order)
        norm_err = max(norm_err, abs(spec.total_weight - 1.0))
        if bias in (0.0, 0.5):
            odd_max = max(odd_max, float(np.max(np.abs(spec.coefficients[spec.orders % 2 == 1]))))
        f_avg, quad = oracles.quadrature_sidebands(
            lambda t: float(tuning_curve(tm, bias + amp * math.sin(2 * math.pi * fm * t))), fm, spec.orders)
        fft_vs_quad = max(fft_vs_quad, float(np.max(np.abs(quad - spec.coefficients))))
    still = sideband_spectrum(tm, FluxPulse(phi_amplitude=0.0, f_mod=0.2))
    degenerate = abs(still.xi(0) - 1.0) + float(np.sum(np.abs(still.coefficients))) - 1.0
    ok = norm_err <= 1e-9 and odd_max < 1e-9 and fft_vs_quad <= 1e-8 and abs(degenerate) < 1e-15
    detail = (f"|sum-1| = {norm_err:.1e}, max odd = {odd_max:.1e}, FFT vs quadrature = {fft_vs_quad:.1e}, "
              f"xi_0(A=0) = {still.xi(0).real:.1f}")
    _record(6, ok, detail, time.perf_counter() - t0, 10.0)


# -- 7 ---------------------------------------------------------------------------

def _bias_for(tm: TransmonParams, f: float) -> float:
    return brentq(lambda p: float(tuning_curve(tm, p)) - f, 0.0, 0.5, xtol=1e-14)


def test_criterion_07_golden_rule_and_purcell():
    t0 = time.perf_counter()
    cfg = DeviceConfig()
    tm, wg = cfg.transmon, cfg.waveguide
    assert wg.n_cells == 52
    centre = 0.5 * sum(wg.passband)
    parked = wg.passband[1] + 0.6
    t_out = np.linspace(0.0, 100.0, 401)

    sys_c = assemble(cfg, 1, _bias_for(tm, centre))
    # sudden excitation of the bare atom: the golden-rule setting
    bare = evolve(sys_c, None, initial_state(sys_c, 1, dressed=False), t_out=t_out)
    window = (bare.times >= 2.0) & (bare.times <= 10.0)
    rate = -np.polyfit(bare.times[window], np.log(bare.p_e[window]), 1)[0]
    gamma_1d = 2 * math.pi * wg.g_uc**2 / wg.hopping_J

    # same atom, default (adiabatic) preparation, centre vs parked
    res_c = evolve(sys_c, None, initial_state(sys_c, 1), t_out=t_out)
    sys_p = assemble(cfg, 1, _bias_for(tm, parked))
    res_p = evolve(sys_p, None, initial_state(sys_p, 1), t_out=t_out)
    emitted_c, emitted_p = res_c.leaked[-1], res_p.leaked[-1]
    ratio = emitted_c / max(emitted_p, 1e-300)
    ok = 0.5 <= rate / gamma_1d <= 2.0 and ratio >= 100
    detail = (f"fitted rate {rate:.4f}/ns vs {gamma_1d:.4f}/ns; emitted in 100 ns {emitted_c:.4f} at "
              f"{centre:.2f} GHz vs {emitted_p:.1e} at {parked:.2f} GHz")
    _record(7, ok, detail, time.perf_counter() - t0, 300.0)


# -- 8 ---------------------------------------------------------------------------

LOSSY_TRUTH = LossyModeParams(g_l=0.0467, f_l=6.93, kappa_l=0.0176, p_ss=0.0015, gamma_ef=1e-3 / 4.7)
FIT_F_MODS = (0.172, 0.179, 0.186)


def _lossy_traces(tm, params, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 150.0, 151)
    out = []
    for fm in FIT_F_MODS:
        sb = lru_sideband(tm, FluxPulse(phi_amplitude=0.13, f_mod=fm))
        p = lru_analytic_pf(params, sb, t)
        out.append(LruTrace(fm, 0.13, t, p + noise * rng.standard_normal(len(t))))
    return out


RB_TRUTH = dict(a=0.35, b=0.6, c=0.05, lambda_1=0.993, lambda_L=0.985, l_inf=0.04, p_f0=0.0)
RB_DEPTHS = np.array([0, 1, 2, 5, 10, 20, 40, 70, 100, 150, 200, 300])


def _rb_curves(noise=0.0, n_seq=100, seed=0):
    rng = np.random.default_rng(seed)
    pg = survival_model(RB_DEPTHS, RB_TRUTH["a"], RB_TRUTH["b"], RB_TRUTH["c"],
                        RB_TRUTH["lambda_1"], RB_TRUTH["lambda_L"])
    pf = leakage_model(RB_DEPTHS, RB_TRUTH["l_inf"], RB_TRUTH["p_f0"], RB_TRUTH["lambda_L"])
    per = np.empty((n_seq, len(RB_DEPTHS), 3))
    per[:, :, 0] = pg + noise * rng.standard_normal((n_seq, len(RB_DEPTHS)))
    per[:, :, 2] = pf + 0.2 * noise * rng.standard_normal((n_seq, len(RB_DEPTHS)))
    per[:, :, 1] = 1.0 - per[:, :, 0] - per[:, :, 2]
    m = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / math.sqrt(n_seq)
    return RBCurves("synthetic", RB_DEPTHS, m[:, 0], m[:, 1], m[:, 2], se, per, n_seq, None, seed)


def test_criterion_08_fit_recovery():
    t0 = time.perf_counter()
    tm = TransmonParams()
    names = ("g_l", "f_l", "kappa_l", "p_ss")

    clean = fit_lossy_mode(_lossy_traces(tm, LOSSY_TRUTH), tm).params
    lossy_rel = max(abs(getattr(clean, k) / getattr(LOSSY_TRUTH, k) - 1) for k in names)

    # noisy fit, spread from a parametric bootstrap around the fitted model
    noisy = fit_lossy_mode(_lossy_traces(tm, LOSSY_TRUTH, noise=0.01, seed=1), tm).params
    boot = np.array([[getattr(fit_lossy_mode(_lossy_traces(tm, noisy, noise=0.01, seed=100 + b), tm,
                                             n_starts=4).params, k) for k in names] for b in range(20)])
    spread = boot.std(axis=0, ddof=1)
    lossy_z = max(abs(getattr(noisy, k) - getattr(LOSSY_TRUTH, k)) / s for k, s in zip(names, spread))

    rb_clean = fit_leakage_rb(_rb_curves())
    rb_rel = max(abs(getattr(rb_clean, k) / RB_TRUTH[k] - 1)
                 for k in ("a", "b", "c", "lambda_1", "lambda_L", "l_inf"))
    rb_noisy_curves = _rb_curves(noise=0.02, seed=3)
    rb_noisy = fit_leakage_rb(rb_noisy_curves)
    lam_boot = bootstrap_lambda(rb_noisy_curves, n_boot=200, seed=4)
    rb_z = abs(rb_noisy.lambda_1 - RB_TRUTH["lambda_1"]) / lam_boot.std(ddof=1)

    ok = lossy_rel <= 0.005 and rb_rel <= 0.005 and lossy_z <= 3 and rb_z <= 3
    detail = (f"lossy mode: noiseless {lossy_rel:.1e} rel, noisy {lossy_z:.2f} sigma; "
              f"leakage RB: noiseless {rb_rel:.1e} rel, noisy {rb_z:.2f} sigma")
    _record(8, ok, detail, time.perf_counter() - t0, 120.0)


# -- 9 ---------------------------------------------------------------------------

def test_criterion_09_rb_behaviour():
    t0 = time.perf_counter()
    depths = RB_DEPTHS
    channels = reference_channels()
    leak = run_rb("leak_inject", depths, 100, channels, seed=11)
    fixed = run_rb("leak_inject_lru", depths, 100, channels, seed=12)
    ref = run_rb("reference", depths, 100, channels, seed=13)
    lru = run_rb("lru", depths, 100, channels, seed=14)
    late = depths >= 100
    pf_steady = float(np.mean(fixed.p_f[late]))
    err = irb_infidelity(fit_leakage_rb(ref), fit_leakage_rb(lru))
    ok = (leak.p_f[-1] > 0.20 and leak.p_g[-1] < 0.50 and pf_steady < 0.002 and 0.005 <= err <= 0.010)
    detail = (f"no LRU: P_f {leak.p_f[-1]:.3f}, P_g {leak.p_g[-1]:.3f} at depth {depths[-1]}; "
              f"with LRU: P_f {pf_steady * 100:.4f} %; iRB error {err * 100:.3f} %")
    _record(9, ok, detail, time.perf_counter() - t0, 300.0)


# -- 10 --------------------------------------------------------------------------

def test_criterion_10_lzs():
    t0 = time.perf_counter()
    g = 0.0236
    tm = TransmonParams()
    fast = lzs_survival(g, 1e9, 1.0)
    slow = lzs_survival(g, 1e-9, 1.0)
    base = FluxPulse(phi_amplitude=0.2, tau_pulse=220.0, tau_buffer=60.0)
    sigmas = np.linspace(0.0, 15.0, 16)
    revival = []
    for s in sigmas:
        slope = crossing_slope(tm, dataclasses.replace(base, sigma_filter=float(s)), 7.1)
        revival.append(lzs_survival(g, slope, 1.0))
    revival = np.array(revival)
    ok = (fast < 1e-6 and abs(slow - 1.0) < 1e-12 and revival[0] == 0.0
          and bool(np.all(np.diff(revival) > 0)) and diabatic_probability(g, math.inf) == 1.0)
    detail = (f"P_R(fast) = {fast:.1e}, P_R(slow) = {slow:.6f}; over sigma 0..15 ns P_R rises "
              f"{revival[0]:.3f} -> {revival[-1]:.3f} monotonically")
    _record(10, ok, detail, time.perf_counter() - t0, 10.0)


# -- 11 --------------------------------------------------------------------------

def test_criterion_11_readout():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_round_trip = 0.0
    stochastic = True
    for _ in range(200):
        m = rng.dirichlet(np.ones(3) * 0.5, size=3).T + np.eye(3) * 2
        m /= m.sum(axis=0)
        cm = ConfusionMatrix(m)
        p = rng.dirichlet(np.ones(3))
        worst_round_trip = max(worst_round_trip, float(np.max(np.abs(invert_confusion(cm, apply_confusion(cm, p)) - p))))
        stochastic &= bool(np.allclose(cm.m.sum(axis=0), 1.0, atol=1e-12))

    spec = reference_clouds()
    train = synthesize_shots(spec, 20000, seed=1)
    test = synthesize_shots(spec, 200000, seed=2)
    clf = linear_discriminant(train)
    conf = estimate_confusion(test, clf)
    f_ro = assignment_fidelity(conf)
    stochastic &= bool(np.allclose(conf.m.sum(axis=0), 1.0, atol=1e-12))
    acceptance, herald_err = herald_threshold(clf, 0.9999).evaluate(test)
    ok = (worst_round_trip <= 1e-9 and stochastic and abs(f_ro - 0.943) < 0.005
          and herald_err <= 2e-4 and acceptance > 0)
    detail = (f"round trip {worst_round_trip:.1e}, F_RO = {f_ro * 100:.2f} %, herald at 0.9999: "
              f"error {herald_err:.1e} with acceptance {acceptance:.3f}")
    _record(11, ok, detail, time.perf_counter() - t0, 60.0)


# -- 12 --------------------------------------------------------------------------

CLI_RUNS = {
    "sweep-reset": ["--f-mod", "0.1,0.3", "--phi-a", "0.1,0.25", "--prepared", "e", "--tau-pulse", "30"],
    "lru-scan": ["--f-mod", "0.17,0.18,0.19", "--phi-a", "0.12,0.13"],
    "lru-trace": ["--backend", "pulse"],
    "lzs": [],
    "rb": ["--n-sequences", "12"],
    "readout-calib": [],
    "microwave-reset": [],
}


def _cli_tables(out: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_criterion_12_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    mismatched = []
    for cmd, extra in CLI_RUNS.items():
        tables = []
        for run, threads in enumerate((1, 1, 4)):
            out = tmp_path / f"{cmd}-{run}"
            rc = cli.main([cmd, "--out", str(out), "--threads", str(threads), "--seed", "5", *extra])
            assert rc == 0, f"{cmd} exited with {rc}"
            tables.append(_cli_tables(out))
        if not tables[0] or any(t != tables[0] for t in tables[1:]):
            mismatched.append(cmd)
    ok = not mismatched
    detail = (f"{len(CLI_RUNS)} subcommands byte-identical over 2 runs at 1 thread and 1 run at 4"
              if ok else f"differences in {mismatched}")
    _record(12, ok, detail, time.perf_counter() - t0, 300.0)


if __name__ == "__main__":
    import tempfile

    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_criterion")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            pass

"""End-to-end acceptance checks, one test per criterion.

Each test runs the shipped configuration from ``configs/`` (cached for the
session), prints a single PASS/FAIL line and then asserts.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from anderson_lab.asymptotics import beta_closed_form
from anderson_lab.harness import load_spec, run
from anderson_lab.model import ModelConfig, realization_from_values, sample_realization
from anderson_lab.pruefer import PrueferState, flow_cell, to_pruefer
from anderson_lab.spectral import BoxSpec, green_function
from anderson_lab.transfer import cell_matrices, constant_step, unit_cell_transfer

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
MINUTE = 60.0

# criterion experiments; the determinism check reruns every one of them
EXPERIMENTS = ("lyapunov", "lyapunov_lambda2", "negative_moment", "green_decay", "eigen_decay",
               "correlator_decay", "kappa_dichotomy", "transport_critical", "transport_control", "martingale")

_cache = {}


def record(name):
    if name not in _cache:
        _cache[name] = run(load_spec(str(CONFIGS / f"{name}.json")), workers=1, write=False)
    return _cache[name]


@pytest.fixture
def report(capsys):
    def _report(label, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        assert ok, detail
    return _report


def test_c01_exactness_suite(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    u = ModelConfig(0.25, 1.0).single_site
    T = cell_matrices(u, rng.uniform(-10, 10, 10 ** 4), rng.uniform(-5, 60, 10 ** 4))
    det_err = float(np.max(np.abs(np.linalg.det(T) - 1)))

    r0 = realization_from_values(ModelConfig(0.25, 1.0), 0, np.zeros(2))
    free_err = 0.0
    for E in rng.uniform(-5, 60, 50):
        k = math.sqrt(abs(E))
        if E > 0:
            ref = [[math.cos(k), math.sin(k) / k], [-k * math.sin(k), math.cos(k)]]
        else:
            ref = [[math.cosh(k), math.sinh(k) / k], [k * math.sinh(k), math.cosh(k)]]
        free_err = max(free_err, float(np.max(np.abs(unit_cell_transfer(r0, 1, E) - ref))))
        free_err = max(free_err, float(np.max(np.abs(constant_step(0.0, E, 1.0) - ref))))

    r = sample_realization(ModelConfig(0.25, 2.0), (1, 1000), seed=11)
    pr_err = 0.0
    for n in range(1, 1001):
        E = rng.uniform(0.2, 20)
        k = math.sqrt(E)
        s = PrueferState(0.0, rng.uniform(0, 2 * math.pi), k)
        out = flow_cell(r, n, s, E)
        v = unit_cell_transfer(r, n, E) @ np.array(s.to_solution())
        ref = to_pruefer(v[0], v[1], k, theta_hint=out.theta)
        pr_err = max(pr_err, abs(out.log_R - ref.log_R), abs(out.theta - ref.theta))

    box = BoxSpec(-20, 20)
    g = green_function(sample_realization(ModelConfig(0.25, 2.0), (-20, 19), seed=5), box, 1.0)
    a, b = rng.uniform(-20, 20, (2, 500))
    sym_err = float(np.max(np.abs(g(a, b) - g(b, a))))
    elapsed = time.perf_counter() - t0

    ok = det_err < 1e-10 and free_err < 1e-12 and pr_err < 1e-6 and sym_err < 1e-9 and elapsed < 10
    report("C1 exactness", ok, f"det {det_err:.1e}, free {free_err:.1e}, pruefer {pr_err:.1e}, "
                               f"green symmetry {sym_err:.1e}, {elapsed:.1f} s")


def _lyap(rec):
    fit = rec.fits["E=1.0"]
    return fit, rec.verdicts["convention@E=1.0"]


def test_c02_lyapunov_convention(report):
    rec = record("lyapunov")
    fit, verdict = _lyap(rec)
    z = {c: fit[f"z_{c}"] for c in ("twoK", "sqrtE")}
    winners = [c for c in z if abs(z[c]) <= 3 and all(abs(z[o]) >= 5 for o in z if o != c)]
    ok = len(winners) == 1 and verdict == winners[0] and rec.wall_time <= 5 * MINUTE
    report("C2 lyapunov", ok, f"mean {fit['mean']:.6f} +- {fit['std_error']:.6f}, z_twoK {z['twoK']:.2f}, "
                              f"z_sqrtE {z['sqrtE']:.2f}, verdict {verdict}, {rec.wall_time:.0f} s")


def test_c03_lambda_squared_scaling(report):
    f1, _ = _lyap(record("lyapunov"))
    f2, _ = _lyap(record("lyapunov_lambda2"))
    ratio = f2["mean"] / f1["mean"]
    report("C3 scaling", abs(ratio - 4.0) <= 0.4, f"exponent ratio lambda 2 / lambda 1 = {ratio:.3f}")


def test_c04_negative_moment(report):
    rec = record("negative_moment")
    fit = rec.fits["s=0.1"]
    ns = sorted({p.coords["n"] for p in rec.points})
    ok = (fit["rate"] > 0 and fit["r_squared"] >= 0.9 and ns == list(range(50, 801, 50))
          and rec.points[0].result.n_samples == 1000 and rec.wall_time <= 5 * MINUTE)
    # the stored rate is the decay rate, so the slope of the log moment is -rate
    report("C4 negative moment", ok, f"slope {-fit['rate']:.5f}, r2 {fit['r_squared']:.4f}, "
                                     f"{rec.wall_time:.0f} s")


def test_c05_green_fractional_moment(report):
    rec = record("green_decay")
    fit = rec.fits["s=0.1"]
    rate = rec.verdicts["rejection_rate"]
    ok = (fit["rate"] > 0 and fit["r_squared"] >= 0.9 and rate < 0.2 and rec.spec["box"] == [-100, 100]
          and rec.points[0].result.n_samples == 500 and rec.wall_time <= 15 * MINUTE)
    report("C5 green", ok, f"slope {-fit['rate']:.4f}, r2 {fit['r_squared']:.4f}, rejections {rate:.1%}, "
                           f"{rec.wall_time:.0f} s")


def test_c06_eigenfunction_decay(report):
    rec = record("eigen_decay")
    f = rec.fits
    ok = (f["median_r_squared"] >= 0.85 and f["median_rate"] > 0 and f["n_states"] >= 50
          and f["n_realizations"] >= 10 and rec.wall_time <= 15 * MINUTE)
    report("C6 eigenfunctions", ok, f"median r2 {f['median_r_squared']:.3f}, median rate {f['median_rate']:.3f}, "
                                    f"{f['n_states']} states / {f['n_realizations']} realizations, "
                                    f"{rec.wall_time:.0f} s")


def test_c07_correlator_decay(report):
    rec = record("correlator_decay")
    fit = rec.fits["one_minus_2alpha"]
    alt = rec.fits["one_minus_alpha"]
    ok = (fit["rate"] > 0 and fit["r_squared"] >= 0.85 and rec.verdicts["better_gamma"] in rec.fits
          and rec.points[0].result.n_samples == 200 and rec.wall_time <= 30 * MINUTE)
    report("C7 correlator", ok, f"gamma 0.5: rate {fit['rate']:.3f} r2 {fit['r_squared']:.3f}; gamma 0.75: r2 "
                                f"{alt['r_squared']:.3f}; better {rec.verdicts['better_gamma']}, "
                                f"{rec.wall_time:.0f} s")


def test_c08_kappa_dichotomy(report):
    rec = record("kappa_dichotomy")
    lo = rec.fits["kappa=0.25"]["ratio_last_first"]
    hi = rec.fits["kappa=0.75"]["ratio_last_first"]
    ok = abs(lo - 1) < 0.1 and hi > 1.5 and rec.points[0].result.n_samples == 100
    report("C8 kappa", ok, f"doubling ratio kappa 0.25: {lo:.4f}, kappa 0.75: {hi:.4g}")


def test_c09_critical_transport(report):
    crit = record("transport_critical")
    ctrl = record("transport_control")
    s, se = crit.fits["loglog_slope"], crit.fits["slope_std_error"]
    c = ctrl.fits["loglog_slope"]
    ok = s - 3 * se > 0 and abs(c) <= 0.1
    report("C9 transport", ok, f"alpha 0.5 slope {s:.3f} +- {se:.3f}; alpha 0.25 control slope {c:.2e} "
                               f"(lambda {ctrl.spec['model']['lambda']})")


def test_c10_martingale_diagnostic(report):
    rec = record("martingale")
    _, winner = _lyap(record("lyapunov"))
    ns = sorted({p.coords["n"] for p in rec.points})
    spec = load_spec(str(CONFIGS / "martingale.json"))
    beta = beta_closed_form(spec.model, float(spec.param("energy")), winner)
    lines, ok = [], rec.points[0].result.n_samples == 2000
    ratios = []
    for n in ns:
        f = rec.fits[f"n={n}"]
        t4 = next(p.result for p in rec.points if p.coords == {"n": n, "term": "term4"})
        z4 = (t4.mean / f["sigma"] - beta) / (t4.std_error / f["sigma"])
        ok &= abs(f["z_term1"]) <= 3 and abs(f["z_term3"]) <= 3 and abs(z4) <= 3
        ratios.append(f["residual_over_sigma"])
        lines.append(f"n={n}: z1 {f['z_term1']:.2f}, z3 {f['z_term3']:.2f}, z4 {z4:.2f}, "
                     f"residual/sigma {f['residual_over_sigma']:.2e}")
    ok &= all(b < a for a, b in zip(ratios, ratios[1:])) and len(ns) >= 2
    report("C10 martingale", ok, f"beta {winner} {beta:.6f}; " + "; ".join(lines))


def test_c11_determinism(report):
    bad = []
    for name in EXPERIMENTS:
        other = run(load_spec(str(CONFIGS / f"{name}.json")), workers=2, write=False)
        if other.numeric_payload() != record(name).numeric_payload():
            bad.append(name)
    report("C11 determinism", not bad, f"{len(EXPERIMENTS) - len(bad)}/{len(EXPERIMENTS)} experiments identical "
                                       f"at 1 vs 2 workers" + (f"; differ: {bad}" if bad else ""))

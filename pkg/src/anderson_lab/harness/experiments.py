"""Dispatch of experiment kinds to the numerical modules."""

from __future__ import annotations

import math
import time
from functools import partial

import numpy as np

from .. import __version__
from ..asymptotics import (batch_couplings, beta_closed_form, block_statistics, fit_stretched_exponential,
                           log_norm_samples, sum_envelope)
from ..dynamics import SmoothWindow, correlator_samples, kappa_samples, transport_scan
from ..model import aux_rng
from ..pruefer import martingale_terms
from ..sampling import EstimatorResult, map_samples, summarize
from ..spectral import BoxSpec, GreenRejectionError, eigen_decay_samples, green_log_norm_samples
from .config import ExperimentSpec, spec_hash
from .record import Point, RunRecord, export

TERMS = ("term1", "term2", "term3", "term4", "residual")


def _point(coords, res: EstimatorResult, rejections=0) -> Point:
    return Point(coords, res, int(rejections))


def _key(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _lyapunov(spec: ExperimentSpec, workers):
    cfg = spec.model
    n = int(spec.param("n"))
    ns = sorted(set([n] + list(spec.param("checkpoints", []))))
    points, fits, verdicts = [], {}, {}
    for E in spec.param("energies"):
        E = float(E)
        logs = log_norm_samples(cfg, E, 0, ns, spec.n_samples, spec.root_seed, workers=workers)
        by_n = {}
        for j, nn in enumerate(ns):
            sig = sum_envelope(1, nn, 2 * cfg.alpha)
            res = summarize(logs[:, j] / sig, spec.root_seed, {"sigma": sig})[0]
            by_n[nn] = res
            points.append(_point({"E": E, "n": nn}, res))
        res = by_n[n]
        entry = {"mean": res.mean, "std_error": res.std_error}
        z = {}
        for conv in ("twoK", "sqrtE"):
            b = beta_closed_form(cfg, E, conv)
            entry[f"beta_{conv}"] = b
            z[conv] = (res.mean - b) / res.std_error
            entry[f"z_{conv}"] = z[conv]
        winners = [c for c in z if abs(z[c]) <= 3 and all(abs(z[o]) >= 5 for o in z if o != c)]
        verdicts[f"convention@E={_key(E)}"] = winners[0] if len(winners) == 1 else "undecided"
        if len(ns) > 1:
            a, b = by_n[ns[-2]], by_n[ns[-1]]
            entry["stabilization_z"] = (b.mean - a.mean) / math.hypot(a.std_error, b.std_error)
        fits[f"E={_key(E)}"] = entry
    return points, fits, verdicts, 0


def _blocks(spec: ExperimentSpec, workers):
    cfg = spec.model
    E = float(spec.param("energy"))
    n0 = int(spec.param("n0"))
    beta = beta_closed_form(cfg, E, "twoK")
    points, fits, verdicts = [], {}, {}
    for l in spec.param("blocks"):
        first, second = block_statistics(cfg, E, int(l), n0, spec.n_samples, spec.root_seed, workers)
        sig = first.metadata["sigma_block"]
        points.append(_point({"l": int(l), "statistic": "mean"}, first))
        points.append(_point({"l": int(l), "statistic": "second"}, second))
        fits[f"l={l}"] = {"sigma_block": sig, "mean_over_sigma": first.mean / sig,
                          "second_over_sigma": second.mean / sig}
        verdicts[f"lower_bound@l={l}"] = bool(first.mean >= 0.5 * (0.5 * beta) * sig)
    return points, fits, verdicts, 0


def _negative(spec: ExperimentSpec, workers):
    cfg = spec.model
    E, m = float(spec.param("energy")), int(spec.param("m"))
    ns = [int(n) for n in spec.param("ns")]
    logs = log_norm_samples(cfg, E, m, ns, spec.n_samples, spec.root_seed, workers=workers)
    points, fits, verdicts = [], {}, {}
    gamma = 1 - 2 * cfg.alpha
    for s in spec.param("s_values"):
        s = float(s)
        res = summarize(np.exp(-s * logs), spec.root_seed)
        for nn, r in zip(ns, res):
            points.append(_point({"s": s, "n": nn}, r))
        fit = fit_stretched_exponential([abs(n - m) for n in ns], [r.mean for r in res], gamma)
        fits[f"s={_key(s)}"] = fit.to_dict()
        verdicts[f"decay@s={_key(s)}"] = bool(fit.rate > 0 and fit.r_squared >= 0.9)
    return points, fits, verdicts, 0


def _green(spec: ExperimentSpec, workers):
    cfg = spec.model
    box = BoxSpec(*spec.param("box"))
    E, y = float(spec.param("energy")), int(spec.param("y"))
    xs = [int(x) for x in spec.param("xs")]
    logs = green_log_norm_samples(cfg, box, xs, y, E, spec.n_samples, spec.root_seed, workers)
    rejected = int(np.sum(np.isnan(logs[:, 0])))
    rate = rejected / spec.n_samples
    if rejected and rate >= float(spec.param("max_rejection", 0.2)):
        raise GreenRejectionError(f"rejection rate {rate:.1%} exceeds the limit; move E or shrink the box")
    points, fits, verdicts = [], {}, {"rejection_rate": rate}
    gamma = 1 - 2 * cfg.alpha
    for s in spec.param("s_values"):
        s = float(s)
        if not (0 < s < 0.5):
            raise ValueError("s_values must lie in (0, 1/2)")
        res = summarize(np.exp(s * logs), spec.root_seed)
        for x, r in zip(xs, res):
            points.append(_point({"s": s, "x": x}, r, rejected))
        far = [(abs(x - y), r.mean) for x, r in zip(xs, res) if x != y]
        fit = fit_stretched_exponential([d for d, _ in far], [v for _, v in far], gamma)
        fits[f"s={_key(s)}"] = fit.to_dict()
        verdicts[f"decay@s={_key(s)}"] = bool(fit.rate > 0 and fit.r_squared >= 0.9)
    return points, fits, verdicts, rejected


def _eigen(spec: ExperimentSpec, workers):
    cfg = spec.model
    box = BoxSpec(*spec.param("box"))
    rows = eigen_decay_samples(cfg, box, spec.param("interval"), spec.n_samples, spec.root_seed,
                               workers, int(spec.param("min_side", 10)))
    ok = rows[np.isfinite(rows[:, 2])]
    skipped = len(rows) - len(ok)
    points = [_point({"quantity": "rate"}, summarize(ok[:, 2], spec.root_seed)[0], skipped),
              _point({"quantity": "r_squared"}, summarize(ok[:, 3], spec.root_seed)[0], skipped)]
    med_r2 = float(np.median(ok[:, 3])) if len(ok) else float("nan")
    med_rate = float(np.median(ok[:, 2])) if len(ok) else float("nan")
    fits = {"median_r_squared": med_r2, "median_rate": med_rate, "n_states": int(len(ok)),
            "n_excluded": int(skipped), "n_realizations": spec.n_samples,
            "gamma": 1 - 2 * cfg.alpha}
    verdicts = {"stretched_decay": bool(med_r2 >= 0.85 and med_rate > 0 and len(ok) >= 50)}
    return points, fits, verdicts, skipped


def _correlator(spec: ExperimentSpec, workers):
    cfg = spec.model
    box = BoxSpec(*spec.param("box"))
    y = int(spec.param("y"))
    xs = [int(x) for x in spec.param("xs")]
    samples = correlator_samples(cfg, box, y, spec.param("interval"), spec.n_samples, spec.root_seed,
                                 workers, int(spec.param("points_per_cell", 32)))
    cols = [x - box.a for x in xs]
    res = summarize(samples[:, cols], spec.root_seed)
    points = [_point({"x": x}, r) for x, r in zip(xs, res)]
    fits = {}
    far = [(abs(x - y), r.mean) for x, r in zip(xs, res) if x != y]
    for label, g in (("one_minus_2alpha", 1 - 2 * cfg.alpha), ("one_minus_alpha", 1 - cfg.alpha)):
        fits[label] = fit_stretched_exponential([d for d, _ in far], [v for _, v in far], g).to_dict()
    better = max(fits, key=lambda k: fits[k]["r_squared"])
    verdicts = {"better_gamma": better,
                "stretched_decay": bool(fits["one_minus_2alpha"]["rate"] > 0
                                        and fits["one_minus_2alpha"]["r_squared"] >= 0.85)}
    return points, fits, verdicts, 0


def _kappa(spec: ExperimentSpec, workers):
    cfg = spec.model
    Ls = [int(L) for L in spec.param("half_lengths")]
    kappas = [float(k) for k in spec.param("kappas")]
    ts = np.linspace(0.0, float(spec.param("t_max")), int(spec.param("n_times")))
    logs = kappa_samples(cfg, Ls, kappas, spec.param("interval"), ts, spec.n_samples, spec.root_seed,
                         workers, int(spec.param("points_per_cell", 32)))
    points, fits, verdicts = [], {}, {}
    crit = 1 - 2 * cfg.alpha
    for j, k in enumerate(kappas):
        means = []
        for i, L in enumerate(Ls):
            with np.errstate(over="ignore"):
                r = summarize(np.exp(logs[:, i, j]), spec.root_seed)[0]
            means.append(r.mean)
            points.append(_point({"kappa": k, "half_length": L}, r))
        ratio = means[-1] / means[0]
        fits[f"kappa={_key(k)}"] = {"ratio_last_first": ratio}
        if k < crit:
            verdicts[f"stable@kappa={_key(k)}"] = bool(abs(ratio - 1) < 0.1)
        elif k > crit:
            verdicts[f"grows@kappa={_key(k)}"] = bool(ratio > 1.5)
    return points, fits, verdicts, 0


def _transport(spec: ExperimentSpec, workers):
    cfg = spec.model
    box = BoxSpec(*spec.param("box"))
    w = spec.param("window")
    f = SmoothWindow(float(w["lo"]), float(w["hi"]), float(w["ramp"]))
    scan = transport_scan(cfg, float(spec.param("p")), f, spec.param("T_grid"), box, spec.n_samples,
                          spec.root_seed, workers, int(spec.param("points_per_cell", 32)))
    points = [_point({"T": float(t)}, r) for t, r in zip(scan.T, scan.results)]
    z = scan.slope / scan.slope_se if scan.slope_se > 0 else float("inf")
    fits = {"loglog_slope": scan.slope, "slope_std_error": scan.slope_se, "slope_z": z}
    verdicts = {"positive_at_3sigma": bool(z > 3), "flat_within_0.1": bool(abs(scan.slope) <= 0.1)}
    return points, fits, verdicts, 0


def _martingale_kernel(seeds, config, E, m, ns, theta0):
    k = math.sqrt(E)
    q = batch_couplings(config, seeds, m, max(ns) - 1)
    if theta0 == "uniform":
        th = np.array([aux_rng(int(s)).uniform(0.0, math.pi) for s in seeds])
    else:
        th = float(theta0)
    out = martingale_terms(config.single_site, q, k, th, upto=[n - m for n in ns])
    return out[..., :5].reshape(len(seeds), -1)


def _martingale(spec: ExperimentSpec, workers):
    cfg = spec.model
    E, m = float(spec.param("energy")), int(spec.param("m"))
    ns = [int(n) for n in spec.param("ns")]
    if min(ns) <= m:
        raise ValueError("ns must exceed m")
    kernel = partial(_martingale_kernel, config=cfg, E=E, m=m, ns=tuple(ns), theta0=spec.param("theta0", "uniform"))
    rows = map_samples(kernel, spec.n_samples, spec.root_seed, workers).reshape(spec.n_samples, len(ns), 5)
    beta = beta_closed_form(cfg, E, "twoK")
    points, fits, verdicts = [], {}, {}
    ratios = []
    for i, n in enumerate(ns):
        sig = sum_envelope(m, n - 1, 2 * cfg.alpha)
        res = summarize(rows[:, i, :], spec.root_seed)
        for name, r in zip(TERMS, res):
            points.append(_point({"n": n, "term": name}, r))
        t1, t3, t4, rs = res[0], res[2], res[3], res[4]
        z4 = (t4.mean / sig - beta) / (t4.std_error / sig)
        ratio = abs(rs.mean) / sig
        ratios.append(ratio)
        fits[f"n={n}"] = {"sigma": sig, "z_term1": t1.mean / t1.std_error, "z_term3": t3.mean / t3.std_error,
                          "term4_over_sigma": t4.mean / sig, "beta_twoK": beta, "z_term4_vs_beta": z4,
                          "residual_over_sigma": ratio}
        verdicts[f"term1_centered@n={n}"] = bool(abs(t1.mean) <= 3 * t1.std_error)
        verdicts[f"term3_centered@n={n}"] = bool(abs(t3.mean) <= 3 * t3.std_error)
        verdicts[f"drift_matches_beta@n={n}"] = bool(abs(z4) <= 3)
    verdicts["residual_ratio_decreasing"] = bool(all(b < a for a, b in zip(ratios, ratios[1:])))
    return points, fits, verdicts, 0


RUNNERS = {
    "lyapunov-scan": _lyapunov,
    "block-stats": _blocks,
    "negative-moment": _negative,
    "green-decay": _green,
    "eigen-decay": _eigen,
    "correlator-decay": _correlator,
    "kappa-dichotomy": _kappa,
    "transport-critical": _transport,
    "martingale-diagnostic": _martingale,
}


def run(spec: ExperimentSpec, workers: int | None = None, write: bool = True) -> RunRecord:
    """Run an experiment; the numbers depend only on the config, never on ``workers``.

    If the config names an ``output`` path (and ``write`` is set) the record is
    exported there, as JSON for a ``.json`` suffix and CSV otherwise.
    """
    t0 = time.perf_counter()
    points, fits, verdicts, rejections = RUNNERS[spec.kind](spec, workers)
    wall = time.perf_counter() - t0
    record = RunRecord(spec.kind, spec.raw, spec_hash(spec.raw), __version__, wall, points,
                       _plain(fits), rejections, _plain(verdicts))
    if write and spec.output:
        export(record, spec.output, "json" if spec.output.endswith(".json") else "csv")
    return record


def _plain(obj):
    """Convert numpy scalars to built-in types for JSON."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj

"""Monte Carlo growth estimators for transfer matrices and stretched fits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from .model import ModelConfig, aux_rng, draw_omegas, single_site_fourier
from .sampling import EstimatorResult, map_samples, summarize
from .transfer import cell_matrices, inverse, sweep

CONVENTIONS = ("sqrtE", "twoK")


def beta_closed_form(config: ModelConfig, E: float, convention: str = "twoK") -> float:
    """(lam^2 / 8E) |u_hat(f)|^2 with f = sqrt(E) or 2 sqrt(E)."""
    if E <= 0:
        raise ValueError("E must be positive")
    k = math.sqrt(E)
    if abs(k / math.pi - round(k / math.pi)) < 1e-12:
        raise ValueError("sqrt(E) is a multiple of pi (resonant energy)")
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    f = k if convention == "sqrtE" else 2 * k
    return config.lam ** 2 / (8 * E) * abs(single_site_fourier(config.single_site, f)) ** 2


def sum_envelope(m: int, n: int, p: float) -> float:
    """sum_{j=m}^{n} j^(-p), summed with math.fsum."""
    if not (1 <= m <= n):
        raise ValueError("need 1 <= m <= n")
    return math.fsum(np.arange(m, n + 1, dtype=float) ** (-p))


def batch_couplings(config: ModelConfig, seeds, lo: int, hi: int) -> np.ndarray:
    """lam a_j omega_j for cells lo..hi, one row per sample seed."""
    env = config.lam * config.envelope_values(np.arange(lo, hi + 1))
    return np.stack([env * draw_omegas(config, lo, hi, int(s)) for s in seeds])


def _log_norm_kernel(seeds, config, E, m, checkpoints, random_psi):
    """log ||T(n, m; E) psi0|| for each n in checkpoints (all on one side of m)."""
    checkpoints = np.asarray(checkpoints)
    B = len(seeds)
    if random_psi:
        ang = np.array([aux_rng(int(s)).uniform(0, 2 * np.pi) for s in seeds])
        psi0 = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    else:
        psi0 = np.tile([1.0, 0.0], (B, 1))
    u = config.single_site
    forward = bool(np.all(checkpoints >= m))
    if forward:
        far = int(checkpoints.max())
        if far == m:
            return np.zeros((B, len(checkpoints)))
        mats = cell_matrices(u, batch_couplings(config, seeds, m, far - 1), E)
        _, logs = sweep(mats, psi0, record=True)
        return logs[:, checkpoints - m]
    if np.any(checkpoints > m):
        raise ValueError("checkpoints must lie on one side of m")
    far = int(checkpoints.min())
    if far == m:
        return np.zeros((B, len(checkpoints)))
    mats = inverse(cell_matrices(u, batch_couplings(config, seeds, far, m - 1), E))[:, ::-1]
    _, logs = sweep(mats, psi0, record=True)
    return logs[:, m - checkpoints]


def log_norm_samples(config: ModelConfig, E: float, m: int, checkpoints, n_samples: int,
                     root_seed: int, random_psi: bool = False, workers: int | None = None) -> np.ndarray:
    """Per-sample log ||T(n, m; E) psi0||, shape (n_samples, len(checkpoints))."""
    kernel = partial(_log_norm_kernel, config=config, E=E, m=int(m),
                     checkpoints=tuple(int(c) for c in checkpoints), random_psi=random_psi)
    return map_samples(kernel, n_samples, root_seed, workers)


def estimate_lyapunov(config: ModelConfig, E: float, n: int, n_samples: int, root_seed: int,
                      workers: int | None = None, checkpoints=None) -> EstimatorResult | list[EstimatorResult]:
    """Mean of log ||T(n, 0; E) (1, 0)|| / sum_{j=1}^n j^(-2 alpha).

    With ``checkpoints`` (list of n values) one run yields one result per n.
    """
    if n < 1 or n_samples < 2:
        raise ValueError("need n >= 1 and n_samples >= 2")
    ns = [n] if checkpoints is None else list(checkpoints)
    logs = log_norm_samples(config, E, 0, ns, n_samples, root_seed, workers=workers)
    out = []
    for j, nn in enumerate(ns):
        sig = sum_envelope(1, nn, 2 * config.alpha)
        res = summarize(logs[:, j] / sig, root_seed,
                        {"E": E, "n": nn, "alpha": config.alpha, "lam": config.lam, "sigma": sig})[0]
        out.append(res)
    return out[0] if checkpoints is None else out


def block_statistics(config: ModelConfig, E: float, l: int, n0: int, n_samples: int, root_seed: int,
                     workers: int | None = None) -> tuple[EstimatorResult, EstimatorResult]:
    """First and second moments of log ||T psi0|| over the cells (l-1) n0 + 1 .. l n0.

    psi0 is drawn uniformly on the unit circle for every sample.
    """
    if l < 1 or n0 < 1:
        raise ValueError("need l >= 1 and n0 >= 1")
    start = (l - 1) * n0 + 1
    logs = log_norm_samples(config, E, start, [start + n0], n_samples, root_seed,
                            random_psi=True, workers=workers)[:, 0]
    meta = {"E": E, "l": l, "n0": n0, "sigma_block": sum_envelope(start, l * n0, 2 * config.alpha)}
    first = summarize(logs, root_seed, meta)[0]
    second = summarize(logs * logs, root_seed, meta)[0]
    return first, second


def estimate_negative_moment(config: ModelConfig, E: float, m: int, n, s: float, n_samples: int,
                             root_seed: int, workers: int | None = None):
    """Mean of ||T(n, m; E) (1, 0)||^(-s); ``n`` may be an int or a list."""
    if not (0 < s < 1):
        raise ValueError("s must lie in (0, 1)")
    ns = [n] if np.isscalar(n) else list(n)
    logs = log_norm_samples(config, E, m, ns, n_samples, root_seed, workers=workers)
    out = [summarize(np.exp(-s * logs[:, j]), root_seed, {"E": E, "m": m, "n": nn, "s": s})[0]
           for j, nn in enumerate(ns)]
    return out[0] if np.isscalar(n) else out


@dataclass(frozen=True)
class StretchedFit:
    rate: float
    intercept: float
    gamma: float
    r_squared: float

    def to_dict(self) -> dict:
        return {"rate": self.rate, "intercept": self.intercept, "gamma": self.gamma,
                "r_squared": self.r_squared}


def fit_stretched_log(xs, log_ys, gamma: float) -> StretchedFit:
    """Least squares of log y = intercept - rate * x^gamma, given log y directly."""
    xs = np.asarray(xs, dtype=float)
    ly = np.asarray(log_ys, dtype=float)
    if xs.shape != ly.shape or xs.size < 3:
        raise ValueError("need matching arrays with at least 3 points")
    X = xs ** gamma
    slope, intercept = np.polyfit(X, ly, 1)
    pred = intercept + slope * X
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    if ss_tot == 0:
        slope = 0.0
    return StretchedFit(float(-slope), float(intercept), float(gamma), float(r2))


def fit_stretched_exponential(xs, ys, gamma: float) -> StretchedFit:
    ys = np.asarray(ys, dtype=float)
    if np.any(ys <= 0):
        raise ValueError("ys must be positive")
    return fit_stretched_log(xs, np.log(ys), gamma)

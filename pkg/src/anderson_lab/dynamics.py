"""Finite-difference time evolution on a box: correlators and moments.

The box [a, b] is discretized with spacing h = 1/N at the interior points
x_i = a + i h. The potential entering the matrix at x_i is the average of
lam V over [x_i - h/2, x_i + h/2], which is exact for the piecewise-constant
bump except in the O(h) neighborhood of its jumps. Eigenvectors v_n are
orthonormal in l2; the continuum-normalized eigenfunctions are v_n / sqrt(h).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import logsumexp

from .model import DisorderRealization, ModelConfig, ResourceGuardError, sample_realization
from .sampling import EstimatorResult, map_samples, summarize
from .spectral import BoxSpec

MAX_GRID_POINTS = 16384
DEFAULT_POINTS_PER_CELL = 32


def cell_averaged_potential(realization: DisorderRealization, box: BoxSpec, x: np.ndarray,
                            h: float) -> np.ndarray:
    """Average of lam V over [x - h/2, x + h/2] for each grid point (h <= 1)."""
    u = realization.config.single_site
    q = realization.couplings(box.a, box.b - 1)
    lo, hi = x - h / 2, x + h / 2
    out = np.zeros_like(x)
    # the averaging interval meets at most the cells floor(lo) and floor(hi)
    first, last = np.floor(lo).astype(np.int64), np.floor(hi).astype(np.int64)
    for cell, active in ((first, np.ones(x.shape, dtype=bool)), (last, last != first)):
        inside = active & (cell >= box.a) & (cell < box.b)
        c = np.where(inside, q[np.clip(cell - box.a, 0, box.n_cells - 1)], 0.0)
        for (slo, shi), height in u.segments:
            overlap = np.clip(np.minimum(hi, cell + shi) - np.maximum(lo, cell + slo), 0.0, None)
            out += c * height * overlap
    return out / h


@dataclass
class DiscretizedBox:
    box: BoxSpec
    h: float
    x: np.ndarray
    diag: np.ndarray
    offdiag: np.ndarray
    energies: np.ndarray | None = None
    vectors: np.ndarray | None = None
    _window: tuple | None = field(default=None, repr=False)

    @classmethod
    def build(cls, realization: DisorderRealization, box: BoxSpec,
              points_per_cell: int = DEFAULT_POINTS_PER_CELL,
              max_points: int = MAX_GRID_POINTS) -> "DiscretizedBox":
        h = 1.0 / points_per_cell
        n = box.n_cells * points_per_cell - 1
        if n > max_points:
            raise ResourceGuardError(f"{n} grid points exceed the cap of {max_points}")
        x = box.a + h * np.arange(1, n + 1)
        V = cell_averaged_potential(realization, box, x, h)
        return cls(box, h, x, 2.0 / h ** 2 + V, np.full(n - 1, -1.0 / h ** 2))

    @property
    def size(self) -> int:
        return self.x.size

    def eigensystem(self, window: tuple[float, float] | None = None):
        """Eigenpairs with energies in ``window`` (all of them when None)."""
        key = None if window is None else (float(window[0]), float(window[1]))
        if self.energies is None or self._window != key:
            if key is None:
                w, v = eigh_tridiagonal(self.diag, self.offdiag)
            else:
                w, v = eigh_tridiagonal(self.diag, self.offdiag, select="v", select_range=key)
            self.energies, self.vectors, self._window = w, v, key
        return self.energies, self.vectors

    def cell_index(self) -> np.ndarray:
        """Cell number (relative to a) of every grid point."""
        return np.floor(self.x - self.box.a).astype(np.int64).clip(0, self.box.n_cells - 1)

    def cell_masses(self, vectors: np.ndarray) -> np.ndarray:
        """||chi_x phi_n||^2 for every cell x (rows) and eigenvector n (columns)."""
        idx = self.cell_index()
        out = np.zeros((self.box.n_cells, vectors.shape[1]))
        np.add.at(out, idx, vectors ** 2)
        return out

    def indicator(self, cell: int) -> np.ndarray:
        """Grid samples of chi_cell (a function, not normalized)."""
        return ((self.x >= cell) & (self.x < cell + 1)).astype(float)


def correlator_profile(dbox: DiscretizedBox, y: int, I) -> "CorrelatorProfile":
    w, v = dbox.eigensystem(I)
    keep = (w >= I[0]) & (w <= I[1])
    norms = np.sqrt(dbox.cell_masses(v[:, keep]))
    j = y - dbox.box.a
    vals = norms @ norms[j]
    return CorrelatorProfile(y, dict(zip(map(int, dbox.box.cells()), map(float, vals))), tuple(I))


@dataclass(frozen=True)
class CorrelatorProfile:
    y: int
    values: dict
    interval: tuple


def correlator(dbox: DiscretizedBox, x: int, y: int, I) -> float:
    """sum over E_n in I of ||chi_x phi_n|| ||chi_y phi_n||."""
    for c in (x, y):
        if not (dbox.box.a <= c < dbox.box.b):
            raise ValueError(f"cell {c} outside the box")
    w, v = dbox.eigensystem(I)
    keep = (w >= I[0]) & (w <= I[1])
    if not np.any(keep):
        return 0.0
    v = v[:, keep]
    idx = dbox.cell_index()
    nx = np.sqrt(np.sum(v[idx == x - dbox.box.a] ** 2, axis=0))
    ny = np.sqrt(np.sum(v[idx == y - dbox.box.a] ** 2, axis=0))
    return float(nx @ ny)


# --- energy windows -----------------------------------------------------------

def _smooth_step(t):
    t = np.asarray(t, dtype=float)
    f = lambda s: np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    return f(t) / (f(t) + f(1.0 - t))


@dataclass(frozen=True)
class SmoothWindow:
    """C-infinity bump: 1 on [lo + ramp, hi - ramp], 0 outside [lo, hi]."""

    lo: float
    hi: float
    ramp: float

    def __post_init__(self):
        if not (self.hi > self.lo and 0 < self.ramp <= (self.hi - self.lo) / 2):
            raise ValueError("need hi > lo and 0 < ramp <= (hi - lo)/2")

    @property
    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def __call__(self, E):
        return _smooth_step((np.asarray(E) - self.lo) / self.ramp) * _smooth_step((self.hi - np.asarray(E)) / self.ramp)


@dataclass(frozen=True)
class ConstantWindow:
    """f = 1 on [lo, hi] (used to take the whole spectrum)."""

    lo: float
    hi: float

    @property
    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def __call__(self, E):
        E = np.asarray(E, dtype=float)
        return ((E >= self.lo) & (E <= self.hi)).astype(float)


# --- time-averaged moments ----------------------------------------------------

def _window_eigs(dbox: DiscretizedBox, f, full: bool):
    if full:
        w, v = dbox.eigensystem(None)
    else:
        w, v = dbox.eigensystem(f.support)
    fw = f(w)
    keep = fw != 0
    return w[keep], v[:, keep], fw[keep]


def moment_M(dbox: DiscretizedBox, p: float, f: Callable, T, full_spectrum: bool = False):
    """(2/T) int_0^inf e^{-2t/T} || |X|^{p/2} e^{-itH} f(H) chi_0 ||^2 dt.

    The time integral is done in closed form in the eigenbasis:
    sum_{n,m} a_n a_m B_nm / (1 + i T (E_n - E_m) / 2). ``T`` may be an array.
    """
    if p < 0:
        raise ValueError("p must be nonnegative")
    Ts = np.atleast_1d(np.asarray(T, dtype=float))
    if np.any(Ts <= 0):
        raise ValueError("T must be positive")
    w, v, fw = _window_eigs(dbox, f, full_spectrum)
    chi0 = dbox.indicator(0)
    a = fw * math.sqrt(dbox.h) * (chi0 @ v)
    weight = np.abs(dbox.x) ** p
    B = (v.T * weight) @ v
    AB = np.outer(a, a) * B
    D = w[:, None] - w[None, :]
    out = np.array([np.real(np.sum(AB / (1.0 + 0.5j * t * D))) for t in Ts])
    return float(out[0]) if np.isscalar(T) else out


def moment_profile_at_time(dbox: DiscretizedBox, p: float, f: Callable, t: float,
                           full_spectrum: bool = False) -> float:
    """|| |X|^{p/2} e^{-itH} f(H) chi_0 ||^2 at a single time."""
    w, v, fw = _window_eigs(dbox, f, full_spectrum)
    a = fw * math.sqrt(dbox.h) * (dbox.indicator(0) @ v)
    psi = v @ (a * np.exp(-1j * w * t))
    return float(np.sum(np.abs(dbox.x) ** p * np.abs(psi) ** 2))


def ballistic_horizon(box: BoxSpec, E_max: float) -> float:
    """Largest T for which a wave packet at energy <= E_max stays clear of the walls."""
    half = 0.5 * box.n_cells
    return half / (2.0 * math.sqrt(max(E_max, 1e-12)))


def _transport_kernel(seeds, config, box, p, f, Ts, points_per_cell):
    rows = []
    for s in seeds:
        r = sample_realization(config, (box.a, box.b - 1), int(s))
        d = DiscretizedBox.build(r, box, points_per_cell)
        rows.append(moment_M(d, p, f, Ts))
    return np.array(rows)


@dataclass(frozen=True)
class TransportScan:
    T: np.ndarray
    results: list
    slope: float
    slope_se: float
    rejections: int = 0


def loglog_slope(Ts, samples: np.ndarray) -> tuple[float, float]:
    """Slope of log(mean M) against log T and its delta-method standard error."""
    Ts = np.asarray(Ts, dtype=float)
    mean = samples.mean(axis=0)
    n = samples.shape[0]
    lt = np.log(Ts)
    w = (lt - lt.mean()) / np.sum((lt - lt.mean()) ** 2)
    slope = float(w @ np.log(mean))
    cov = np.cov(samples, rowvar=False, ddof=1) / n
    J = w / mean
    return slope, float(math.sqrt(max(J @ cov @ J, 0.0)))


def transport_scan(config: ModelConfig, p: float, f, Ts, box: BoxSpec, n_samples: int, root_seed: int,
                   workers: int | None = None, points_per_cell: int = DEFAULT_POINTS_PER_CELL) -> TransportScan:
    """Mean of moment_M over realizations at every T, plus the log-log slope."""
    Ts = np.asarray(Ts, dtype=float)
    horizon = ballistic_horizon(box, f.support[1])
    if np.any(Ts > horizon):
        raise ResourceGuardError(f"T={Ts.max():g} exceeds the ballistic horizon {horizon:g} of the box")
    kernel = partial(_transport_kernel, config=config, box=box, p=float(p), f=f, Ts=tuple(Ts),
                     points_per_cell=points_per_cell)
    samples = map_samples(kernel, n_samples, root_seed, workers)
    results = summarize(samples, root_seed, {"p": p, "alpha": config.alpha, "lam": config.lam})
    for t, r in zip(Ts, results):
        r.metadata["T"] = float(t)
    slope, se = loglog_slope(Ts, samples)
    return TransportScan(Ts, results, slope, se)


# --- weighted sup-moments -----------------------------------------------------

def _kappa_logs(dbox: DiscretizedBox, kappa: float, I, psi: np.ndarray, ts) -> np.ndarray:
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    w, v = dbox.eigensystem(I)
    keep = (w >= I[0]) & (w <= I[1])
    w, v = w[keep], v[:, keep]
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    c = v.T @ (np.asarray(psi, dtype=float) * math.sqrt(dbox.h))
    amp = v @ (c[:, None] * np.exp(-1j * np.outer(w, ts)))
    with np.errstate(divide="ignore"):
        lp = np.log(np.abs(amp) ** 2)
    return logsumexp(np.abs(dbox.x)[:, None] ** kappa + lp, axis=0)


def kappa_moment(dbox: DiscretizedBox, kappa: float, I, psi: np.ndarray, ts) -> tuple[float, float]:
    """sup over ts of || e^{|X|^kappa / 2} e^{-itH} P_I psi ||^2 and the maximizing t.

    ``psi`` holds grid samples of an L2-normalized function. The weight is
    applied in log space so that it never overflows.
    """
    logs = _kappa_logs(dbox, kappa, I, psi, ts)
    k = int(np.argmax(logs))
    with np.errstate(over="ignore"):
        return float(np.exp(logs[k])), float(np.atleast_1d(ts)[k])


def kappa_log_moment(dbox: DiscretizedBox, kappa: float, I, psi: np.ndarray, ts) -> float:
    """log of the sup in ``kappa_moment``."""
    return float(np.max(_kappa_logs(dbox, kappa, I, psi, ts)))


def unit_cell_state(dbox: DiscretizedBox, cell: int = 0) -> np.ndarray:
    """Grid samples of chi_cell normalized in L2."""
    chi = dbox.indicator(cell)
    return chi / math.sqrt(dbox.h * chi.sum())


def _correlator_kernel(seeds, config, box, y, I, points_per_cell):
    rows = []
    for s in seeds:
        r = sample_realization(config, (box.a, box.b - 1), int(s))
        d = DiscretizedBox.build(r, box, points_per_cell)
        prof = correlator_profile(d, y, I)
        rows.append([prof.values[int(c)] for c in box.cells()])
    return np.array(rows)


def correlator_samples(config: ModelConfig, box: BoxSpec, y: int, I, n_samples: int, root_seed: int,
                       workers: int | None = None, points_per_cell: int = DEFAULT_POINTS_PER_CELL) -> np.ndarray:
    """Per-sample correlator profile over all cells of the box, shape (n_samples, ncell)."""
    kernel = partial(_correlator_kernel, config=config, box=box, y=int(y), I=tuple(I),
                     points_per_cell=points_per_cell)
    return map_samples(kernel, n_samples, root_seed, workers)


def _kappa_kernel(seeds, config, half_lengths, kappas, I, ts, points_per_cell):
    out = []
    for s in seeds:
        r = sample_realization(config, (-max(half_lengths), max(half_lengths) - 1), int(s))
        row = []
        for L in half_lengths:
            d = DiscretizedBox.build(r, BoxSpec(-L, L), points_per_cell)
            psi = unit_cell_state(d, 0)
            row.extend(kappa_log_moment(d, k, I, psi, ts) for k in kappas)
        out.append(row)
    return np.array(out)


def kappa_samples(config: ModelConfig, half_lengths, kappas, I, ts, n_samples: int, root_seed: int,
                  workers: int | None = None, points_per_cell: int = DEFAULT_POINTS_PER_CELL) -> np.ndarray:
    """Per-sample log sup-moments, shape (n_samples, len(half_lengths), len(kappas)).

    Nested boxes [-L, L] share the same couplings on their common cells.
    """
    kernel = partial(_kappa_kernel, config=config, half_lengths=tuple(int(L) for L in half_lengths),
                     kappas=tuple(kappas), I=tuple(I), ts=tuple(ts), points_per_cell=points_per_cell)
    out = map_samples(kernel, n_samples, root_seed, workers)
    return out.reshape(n_samples, len(half_lengths), len(kappas))

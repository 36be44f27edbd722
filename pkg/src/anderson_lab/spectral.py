"""Dirichlet spectral theory on a finite box [a, b] by exact shooting.

Solutions are carried cell by cell as (unit direction, log norm) pairs so
that nothing overflows on long boxes. Eigenvalues come from Sturm counting
(zeros of the solution vanishing at a) plus bisection; eigenfunctions and
Green's functions are glued from the solutions vanishing at a and at b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.special import logsumexp

from .asymptotics import StretchedFit, batch_couplings, fit_stretched_log
from .model import DisorderRealization, ModelConfig, SingleSitePotential, sample_realization
from .sampling import EstimatorResult, map_samples, summarize
from .transfer import cell_matrices, inverse, piece_coefficients, sweep

ENERGY_CAP = 1e4
POINTS_PER_CELL = 32
REJECT_THRESHOLD = 1e-8
DEFECT_THRESHOLD = 1e-6


class SpectralError(RuntimeError):
    """Numerical failure in a spectral computation."""


class GreenRejectionError(SpectralError):
    """Too many samples had an energy too close to an eigenvalue."""


@dataclass(frozen=True)
class BoxSpec:
    a: int
    b: int

    def __post_init__(self):
        if self.b - self.a < 1:
            raise ValueError("box needs b > a")

    @property
    def n_cells(self) -> int:
        return self.b - self.a

    def cells(self) -> np.ndarray:
        return np.arange(self.a, self.b)


def _box_couplings(realization: DisorderRealization, box: BoxSpec) -> np.ndarray:
    return realization.couplings(box.a, box.b - 1)


# --- per-cell quadrature grid -------------------------------------------------

@dataclass(frozen=True)
class CellGrid:
    """Points in [0, 1] refining every constant piece with an even subdivision."""

    x: np.ndarray          # (npts,)
    weights: np.ndarray    # composite Simpson weights, piecewise
    piece: np.ndarray      # piece index owning each point (left-closed)
    offset: np.ndarray     # distance from the start of that piece
    u: np.ndarray          # single-site height per point's piece


def cell_grid(u: SingleSitePotential, points_per_cell: int = POINTS_PER_CELL) -> CellGrid:
    lengths, heights = u.pieces()
    xs, ws, pc, off, hs = [], [], [], [], []
    start = 0.0
    for j, (ell, h) in enumerate(zip(lengths, heights)):
        m = max(2, int(math.ceil(points_per_cell * ell)))
        m += m % 2
        t = np.linspace(0.0, ell, m + 1)
        w = np.full(m + 1, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        w *= (ell / m) / 3.0
        first = 0 if j == 0 else 1
        if j > 0:
            ws[-1][-1] += w[0]
        xs.append(start + t[first:])
        ws.append(w[first:].copy())
        pc.append(np.full(m + 1 - first, j))
        off.append(t[first:])
        hs.append(np.full(m + 1 - first, h))
        start += ell
    # a point shared by two pieces is evaluated as the end of the left one
    return CellGrid(np.concatenate(xs), np.concatenate(ws), np.concatenate(pc),
                    np.concatenate(off), np.concatenate(hs))


def local_values(u: SingleSitePotential, grid: CellGrid, couplings, E, dirs) -> np.ndarray:
    """(phi, phi') on the cell grid from a start vector at the cell's left edge.

    ``couplings`` (...,) and ``dirs`` (..., 2); returns (..., npts, 2).
    """
    lengths, heights = u.pieces()
    couplings = np.asarray(couplings, dtype=float)
    out = np.empty(couplings.shape + (grid.x.size, 2))
    state = np.array(dirs, dtype=float)
    for j, ell in enumerate(lengths):
        z = (E - couplings * heights[j])[..., None]
        sel = grid.piece == j
        t = grid.offset[sel]
        C, S = piece_coefficients(z, t)
        out[..., sel, 0] = C * state[..., None, 0] + S * state[..., None, 1]
        out[..., sel, 1] = -z * S * state[..., None, 0] + C * state[..., None, 1]
        Ce, Se = piece_coefficients(z[..., 0], ell)
        state = np.stack([Ce * state[..., 0] + Se * state[..., 1],
                          -z[..., 0] * Se * state[..., 0] + Ce * state[..., 1]], axis=-1)
    return out


# --- Sturm counting and eigenvalues -------------------------------------------

def _count(u: SingleSitePotential, couplings: np.ndarray, E: np.ndarray) -> np.ndarray:
    lengths, heights = u.pieces()
    phi = np.zeros_like(E)
    dphi = np.ones_like(E)
    N = np.zeros(E.shape, dtype=np.int64)
    for c in couplings:
        for ell, h in zip(lengths, heights):
            z = E - c * h
            C, S = piece_coefficients(z, ell)
            nphi = C * phi + S * dphi
            ndphi = -z * S * phi + C * dphi
            osc = z > 0
            kap = np.sqrt(np.where(osc, z, 1.0))
            th0 = np.mod(np.arctan2(phi, dphi / kap), np.pi)
            th1 = np.mod(np.arctan2(nphi, ndphi / kap), np.pi)
            # zeros passed, made consistent with the end state actually reached
            n_osc = np.rint((th0 + kap * ell - th1) / np.pi).astype(np.int64)
            n_hyp = ((phi != 0) & (phi * nphi <= 0)).astype(np.int64)
            N += np.where(osc, n_osc, n_hyp)
            nrm = np.hypot(nphi, ndphi)
            phi, dphi = nphi / nrm, ndphi / nrm
    return N - (phi == 0)


def count_eigenvalues_below(realization: DisorderRealization, box: BoxSpec, E):
    """Number of Dirichlet eigenvalues of the box strictly below E."""
    scalar = np.isscalar(E)
    Earr = np.atleast_1d(np.asarray(E, dtype=float))
    out = _count(realization.config.single_site, _box_couplings(realization, box), Earr)
    return int(out[0]) if scalar else out


def spectrum_floor(realization: DisorderRealization, box: BoxSpec) -> float:
    """An energy below the whole Dirichlet spectrum of the box."""
    q = _box_couplings(realization, box)[:, None] * realization.config.single_site.pieces()[1]
    return float(min(0.0, q.min())) - 1.0


def locate_eigenvalues(realization: DisorderRealization, box: BoxSpec, I, tol: float = 1e-12,
                       cap: float = ENERGY_CAP) -> list[float]:
    """All Dirichlet eigenvalues in [lo, hi), each bisected to width tol."""
    lo, hi = float(I[0]), float(I[1])
    if max(abs(lo), abs(hi)) > cap:
        raise SpectralError(f"interval {I} outside the solver range |E| <= {cap}")
    if tol <= 0 or hi <= lo:
        raise ValueError("need tol > 0 and a nonempty interval")
    u = realization.config.single_site
    q = _box_couplings(realization, box)
    n_lo, n_hi = _count(u, q, np.array([lo, hi]))
    targets = np.arange(n_lo, n_hi)
    if targets.size == 0:
        return []
    left = np.full(targets.size, lo)
    right = np.full(targets.size, hi)
    while np.max(right - left) > tol:
        mid = 0.5 * (left + right)
        above = _count(u, q, mid) > targets
        right = np.where(above, mid, right)
        left = np.where(above, left, mid)
    return [float(e) for e in 0.5 * (left + right)]


# --- shooting -----------------------------------------------------------------

def shoot(u: SingleSitePotential, couplings: np.ndarray, E: float):
    """Solutions vanishing at a and at b, at every cell boundary.

    ``couplings`` has shape (..., ncell). Returns (dirs_a, logs_a, dirs_b,
    logs_b) with boundary axis of length ncell + 1. The solution from a
    starts as (0, 1), the one from b ends as (0, -1).
    """
    mats = cell_matrices(u, couplings, E)
    lead = couplings.shape[:-1]
    dirs_a, logs_a = sweep(mats, np.broadcast_to([0.0, 1.0], lead + (2,)), record=True)
    back = inverse(mats)[..., ::-1, :, :]
    dirs_b, logs_b = sweep(back, np.broadcast_to([0.0, -1.0], lead + (2,)), record=True)
    return dirs_a, logs_a, dirs_b[..., ::-1, :], logs_b[..., ::-1]


def _cross(p, q):
    return p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0]


@dataclass(frozen=True)
class EigenPair:
    """Normalized eigenfunction sampled on a per-cell grid.

    ``x``, ``phi``, ``dphi`` have shape (ncell, npts); the first point of a
    cell repeats the last point of the previous cell. ``cell_log_norms[j]``
    is log ||chi_j phi|| and ``cell_log_u_mass[j]`` is log <u_j phi, phi>,
    both kept in log form so that deep tails never underflow.
    """

    energy: float
    box: BoxSpec
    x: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    cell_log_norms: np.ndarray
    cell_log_u_mass: np.ndarray
    defect: float
    glue_cell: int

    def values(self):
        """Flattened (x, phi, phi') without repeated boundary points."""
        x = np.concatenate([self.x[0], self.x[1:, 1:].ravel()])
        p = np.concatenate([self.phi[0], self.phi[1:, 1:].ravel()])
        d = np.concatenate([self.dphi[0], self.dphi[1:, 1:].ravel()])
        return x, p, d

    def norm(self) -> float:
        return float(np.exp(0.5 * logsumexp(2 * self.cell_log_norms)))


def _glued(u, grid, couplings, E):
    da, la, db, lb = shoot(u, couplings, E)
    score = la + lb
    i = int(np.argmax(score))
    defect = abs(_cross(da[i], db[i]))
    sign = 1.0 if np.dot(da[i], db[i]) >= 0 else -1.0
    ncell = couplings.size
    cells = np.arange(ncell)
    left = cells < i
    amp = np.where(left, la[:-1] - la[i], lb[:-1] - lb[i])
    start = np.where(left[:, None], da[:-1], sign * db[:-1])
    vals = local_values(u, grid, couplings, E, start)
    return vals, amp, defect, i


def eigenfunction(realization: DisorderRealization, box: BoxSpec, E: float,
                  points_per_cell: int = POINTS_PER_CELL,
                  defect_threshold: float = DEFECT_THRESHOLD) -> EigenPair:
    """Eigenfunction at a located eigenvalue E, normalized in L2(box)."""
    u = realization.config.single_site
    grid = cell_grid(u, points_per_cell)
    q = _box_couplings(realization, box)
    vals, amp, defect, i = _glued(u, grid, q, E)
    if defect > defect_threshold:
        raise SpectralError(f"E={E} is not an eigenvalue (boundary defect {defect:.2e})")
    sq = vals[..., 0] ** 2
    with np.errstate(divide="ignore"):
        loc = 0.5 * np.log(sq @ grid.weights)
        loc_u = np.log(sq @ (grid.weights * grid.u))
    log_cell = amp + loc
    logZ = 0.5 * logsumexp(2 * log_cell)
    scale = np.exp(amp - logZ)[:, None]
    x = box.a + np.arange(box.n_cells)[:, None] + grid.x[None, :]
    return EigenPair(float(E), box, x, vals[..., 0] * scale, vals[..., 1] * scale,
                     log_cell - logZ, 2 * (amp - logZ) + loc_u, float(defect), box.a + i)


def eigenpairs(realization: DisorderRealization, box: BoxSpec, I, tol: float = 1e-12,
               points_per_cell: int = POINTS_PER_CELL) -> list[EigenPair]:
    return [eigenfunction(realization, box, E, points_per_cell)
            for E in locate_eigenvalues(realization, box, I, tol)]


# --- Green's function ---------------------------------------------------------

@dataclass
class GreenSample:
    """Kernel of (H - E)^{-1} on the box for one realization and energy.

    G(s, t) = -phi_a(min) phi_b(max) / W with W = phi_a phi_b' - phi_a' phi_b,
    which gives the unit jump -1 in d/ds G at s = t.
    """

    E: float
    box: BoxSpec
    u: SingleSitePotential
    couplings: np.ndarray
    dirs_a: np.ndarray
    logs_a: np.ndarray
    dirs_b: np.ndarray
    logs_b: np.ndarray
    log_abs_w: float
    sign_w: float
    points_per_cell: int = POINTS_PER_CELL
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def wronskian(self) -> float:
        """W = phi_a phi_b' - phi_a' phi_b (may overflow to inf on long boxes)."""
        with np.errstate(over="ignore"):
            return self.sign_w * math.exp(min(self.log_abs_w, 709.0))

    def _solution(self, which, x):
        x = np.asarray(x, dtype=float)
        rel = x - self.box.a
        j = np.clip(np.floor(rel).astype(np.int64), 0, self.box.n_cells - 1)
        off = rel - j
        dirs = self.dirs_a if which == "a" else self.dirs_b
        logs = self.logs_a if which == "a" else self.logs_b
        lengths, heights = self.u.pieces()
        edges = np.concatenate([[0.0], np.cumsum(lengths)])
        state = dirs[j].copy()
        c = self.couplings[j]
        for p, ell in enumerate(lengths):
            t = np.clip(off - edges[p], 0.0, ell)
            z = self.E - c * heights[p]
            C, S = piece_coefficients(z, t)
            state = np.stack([C * state[..., 0] + S * state[..., 1],
                              -z * S * state[..., 0] + C * state[..., 1]], axis=-1)
        return state[..., 0], logs[j]

    def __call__(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        lo, hi = np.minimum(s, t), np.maximum(s, t)
        pa, la = self._solution("a", lo)
        pb, lb = self._solution("b", hi)
        return -self.sign_w * pa * pb * np.exp(la + lb - self.log_abs_w)

    def _local(self):
        if "loc" not in self._cache:
            grid = cell_grid(self.u, self.points_per_cell)
            va = local_values(self.u, grid, self.couplings, self.E, self.dirs_a[:-1])[..., 0]
            vb = local_values(self.u, grid, self.couplings, self.E, self.dirs_b[:-1])[..., 0]
            self._cache["loc"] = (grid, va, vb)
        return self._cache["loc"]

    def hs_log_norm(self, x: int, y: int) -> float:
        """log of the Hilbert-Schmidt norm of chi_x G chi_y over unit cells."""
        for cell in (x, y):
            if not (self.box.a <= cell < self.box.b):
                raise ValueError(f"cell {cell} outside box")
        grid, va, vb = self._local()
        i, j = x - self.box.a, y - self.box.a
        return float(_hs_log_norm(grid, va, vb, self.logs_a[:-1], self.logs_b[:-1], self.log_abs_w, i, j))


def _hs_log_norm(grid, va, vb, la, lb, log_w, i, j):
    """Batched HS norm; va/vb (..., ncell, npts) unit-start values, la/lb (..., ncell)."""
    w = grid.weights
    if i != j:
        lo, hi = min(i, j), max(i, j)
        na = 0.5 * np.log(va[..., lo, :] ** 2 @ w)
        nb = 0.5 * np.log(vb[..., hi, :] ** 2 @ w)
        return la[..., lo] + lb[..., hi] + na + nb - log_w
    a2 = va[..., i, :] ** 2
    b2 = vb[..., i, :] ** 2
    # int int G^2 = 2 int phi_b(t)^2 int_{s<t} phi_a(s)^2 ds dt
    inner = cumulative_simpson(a2, x=grid.x, axis=-1, initial=0.0)
    total = 2.0 * np.sum(b2 * inner * w, axis=-1)
    return la[..., i] + lb[..., i] + 0.5 * np.log(total) - log_w


def green_function(realization: DisorderRealization, box: BoxSpec, E: float,
                   threshold: float = REJECT_THRESHOLD) -> GreenSample:
    u = realization.config.single_site
    q = _box_couplings(realization, box)
    da, la, db, lb = shoot(u, q, E)
    i = int(np.argmax(la + lb))
    cr = _cross(da[i], db[i])
    if abs(cr) < threshold:
        raise SpectralError(f"E={E} within rejection distance of an eigenvalue (|cross|={abs(cr):.2e})")
    return GreenSample(float(E), box, u, q, da, la, db, lb,
                       float(la[i] + lb[i] + math.log(abs(cr))), float(np.sign(cr)))


def _green_kernel(seeds, config, box, E, pairs, threshold):
    u = config.single_site
    q = batch_couplings(config, seeds, box.a, box.b - 1)
    da, la, db, lb = shoot(u, q, E)
    score = la + lb
    idx = np.argmax(score, axis=1)
    rows = np.arange(len(seeds))
    cr = np.abs(_cross(da[rows, idx], db[rows, idx]))
    log_w = score[rows, idx] + np.log(np.where(cr > 0, cr, 1.0))
    grid = cell_grid(u)
    need = sorted({c for p in pairs for c in p})
    va = np.zeros(q.shape + (grid.x.size,))
    vb = np.zeros_like(va)
    for c in need:
        va[:, c] = local_values(u, grid, q[:, c], E, da[:, c])[..., 0]
        vb[:, c] = local_values(u, grid, q[:, c], E, db[:, c])[..., 0]
    out = np.stack([_hs_log_norm(grid, va, vb, la[:, :-1], lb[:, :-1], log_w, i, j)
                    for i, j in pairs], axis=1)
    out[cr < threshold] = np.nan
    return out


def green_log_norm_samples(config: ModelConfig, box: BoxSpec, xs, y: int, E: float, n_samples: int,
                           root_seed: int, workers: int | None = None,
                           threshold: float = REJECT_THRESHOLD) -> np.ndarray:
    """Per-sample log ||chi_x G chi_y||_HS for x in xs; NaN marks a rejected sample."""
    pairs = tuple((int(x) - box.a, int(y) - box.a) for x in xs)
    for i, j in pairs:
        if not (0 <= i < box.n_cells and 0 <= j < box.n_cells):
            raise ValueError("cells must lie inside the box")
    kernel = partial(_green_kernel, config=config, box=box, E=float(E), pairs=pairs, threshold=threshold)
    return map_samples(kernel, n_samples, root_seed, workers)


def fractional_moment_green(config: ModelConfig, box: BoxSpec, x, y: int, E: float, s: float,
                            n_samples: int, root_seed: int, workers: int | None = None,
                            max_rejection: float = 0.2):
    """E ||chi_x G chi_y||^s over realizations; ``x`` may be an int or a list.

    Rejected samples (energy within the threshold of an eigenvalue) are
    skipped and counted in the metadata; a rejection rate above
    ``max_rejection`` raises GreenRejectionError.
    """
    if not (0 < s < 0.5):
        raise ValueError("s must lie in (0, 1/2)")
    xs = [x] if np.isscalar(x) else list(x)
    logs = green_log_norm_samples(config, box, xs, y, E, n_samples, root_seed, workers)
    rejected = int(np.sum(np.isnan(logs[:, 0])))
    if rejected > max_rejection * n_samples:
        raise GreenRejectionError(f"{rejected}/{n_samples} samples rejected near eigenvalues")
    out = []
    for j, xx in enumerate(xs):
        meta = {"x": int(xx), "y": int(y), "E": E, "s": s, "rejections": rejected}
        out.append(summarize(np.exp(s * logs[:, j]), root_seed, meta)[0])
    return out[0] if np.isscalar(x) else out


# --- eigenfunction correlators and decay --------------------------------------

def eigenfunction_correlator(realization: DisorderRealization, box: BoxSpec, x: int, m: int, I,
                             v: float, pairs: list[EigenPair] | None = None) -> float:
    """sum over eigenvalues in I of <chi_x phi, phi>^(v/2) <u_m phi, phi>^(1 - v/2)."""
    if not (0.0 <= v <= 2.0):
        raise ValueError("v must lie in [0, 2]")
    if pairs is None:
        pairs = eigenpairs(realization, box, I)
    i, j = x - box.a, m - box.a
    total = 0.0
    for p in pairs:
        if not (I[0] <= p.energy < I[1]):
            continue
        total += math.exp(v * p.cell_log_norms[i] + (1 - v / 2) * p.cell_log_u_mass[j])
    return total


@dataclass(frozen=True)
class DecayProfile:
    fit: StretchedFit
    center: int
    cells: np.ndarray
    log_norms: np.ndarray


def decay_profile(pair: EigenPair, alpha: float, min_side: int = 10) -> DecayProfile:
    """Fit log ||chi_x phi|| against |x - x_max|^(1 - 2 alpha)."""
    logs = pair.cell_log_norms
    cells = pair.box.cells()
    finite = np.isfinite(logs)
    if finite.sum() < 3 or np.sort(logs[finite])[-2] < logs.max() - 700:
        raise SpectralError("degenerate profile: mass concentrated in one cell")
    k = int(np.argmax(logs))
    if k < min_side or len(cells) - 1 - k < min_side:
        raise SpectralError("localization center too close to the box edge")
    d = np.abs(cells - cells[k]).astype(float)
    fit = fit_stretched_log(d[finite], logs[finite], 1.0 - 2.0 * alpha)
    return DecayProfile(fit, int(cells[k]), cells, logs)


def _decay_kernel(seeds, config, box, I, min_side):
    rows = []
    for s in seeds:
        r = sample_realization(config, (box.a, box.b - 1), int(s))
        for p in eigenpairs(r, box, I):
            try:
                prof = decay_profile(p, config.alpha, min_side)
                rows.append((int(s) & 0xFFFFFFFF, p.energy, prof.fit.rate, prof.fit.r_squared, prof.center))
            except SpectralError:
                rows.append((int(s) & 0xFFFFFFFF, p.energy, np.nan, np.nan, np.nan))
    return np.array(rows, dtype=float).reshape(-1, 5)


def eigen_decay_samples(config: ModelConfig, box: BoxSpec, I, n_realizations: int, root_seed: int,
                        workers: int | None = None, min_side: int = 10) -> np.ndarray:
    """Rows (seed tag, energy, rate, r^2, center) for every eigenstate in I."""
    kernel = partial(_decay_kernel, config=config, box=box, I=tuple(I), min_side=min_side)
    return map_samples(kernel, n_realizations, root_seed, workers)


# --- constants for the cell-norm comparisons ----------------------------------

def _cell_grams(u: SingleSitePotential, couplings: np.ndarray, E: float, points_per_cell: int = 64):
    grid = cell_grid(u, points_per_cell)
    basis = np.stack([local_values(u, grid, couplings, E, np.broadcast_to(e, couplings.shape + (2,)))[..., 0]
                      for e in ([1.0, 0.0], [0.0, 1.0])], axis=-1)       # (..., npts, 2)
    G = np.einsum("...pi,p,...pj->...ij", basis, grid.weights, basis)
    Gu = np.einsum("...pi,p,...pj->...ij", basis, grid.weights * grid.u, basis)
    return G, Gu


def cell_norm_constant(u: SingleSitePotential, E: float, coupling_bound: float, n_grid: int = 201) -> float:
    """min over |c| <= bound and unit (phi, phi') at the cell edge of ||chi phi||^2."""
    cs = np.linspace(-coupling_bound, coupling_bound, n_grid)
    G, _ = _cell_grams(u, cs, E)
    return float(np.min(np.linalg.eigvalsh(G)[..., 0]))


def bump_mass_constant(u: SingleSitePotential, E: float, coupling_bound: float, n_grid: int = 201) -> float:
    """min over |c| <= bound and solutions of <u phi, phi> / ||chi phi||^2 on one cell."""
    cs = np.linspace(-coupling_bound, coupling_bound, n_grid)
    G, Gu = _cell_grams(u, cs, E)
    L = np.linalg.cholesky(G)
    Li = np.linalg.inv(L)
    M = Li @ Gu @ np.swapaxes(Li, -1, -2)
    return float(np.min(np.linalg.eigvalsh(M)[..., 0]))

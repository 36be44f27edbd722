"""Modified Pruefer coordinates and the martingale split of log R.

Convention (k = sqrt(E)):

    phi = R sin(theta),   phi' = k R cos(theta)

With -phi'' + V phi = E phi this gives

    theta'   = k - (V / k) sin^2(theta)
    (log R)' = (V / 2k) sin(2 theta)

so theta is increasing wherever phi vanishes, and the zeros of phi are
exactly the points where theta crosses a multiple of pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DisorderRealization, SingleSitePotential, single_site_fourier
from .transfer import cell_matrices, sweep

FLOW_TOL = 1e-12


@dataclass(frozen=True)
class PrueferState:
    log_R: float
    theta: float
    k: float

    def to_solution(self) -> tuple[float, float]:
        R = math.exp(self.log_R)
        return R * math.sin(self.theta), self.k * R * math.cos(self.theta)


def to_pruefer(phi: float, dphi: float, k: float, theta_hint: float | None = None) -> PrueferState:
    if phi == 0 and dphi == 0:
        raise ValueError("zero vector has no Pruefer coordinates")
    if k <= 0:
        raise ValueError("k must be positive")
    log_R = 0.5 * math.log(phi * phi + (dphi / k) ** 2)
    theta = math.atan2(phi, dphi / k)
    if theta_hint is not None:
        theta += 2 * math.pi * round((theta_hint - theta) / (2 * math.pi))
    return PrueferState(log_R, theta, k)


def from_pruefer(state: PrueferState) -> tuple[float, float]:
    return state.to_solution()


def _rhs(theta, V, k):
    s = math.sin(theta)
    return k - V / k * s * s, V / (2 * k) * math.sin(2 * theta)


def _rk4(theta, logR, V, k, h):
    k1 = _rhs(theta, V, k)
    k2 = _rhs(theta + 0.5 * h * k1[0], V, k)
    k3 = _rhs(theta + 0.5 * h * k2[0], V, k)
    k4 = _rhs(theta + h * k3[0], V, k)
    return (theta + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            logR + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))


def _flow_piece(theta, logR, V, k, length, tol):
    # Step size capped so theta moves less than pi/4 per step.
    cap = (math.pi / 4) / (k + abs(V) / k)
    x = 0.0
    h = min(cap, length)
    while x < length:
        h = min(h, length - x)
        t1, l1 = _rk4(theta, logR, V, k, h)
        th, lh = _rk4(theta, logR, V, k, h / 2)
        t2, l2 = _rk4(th, lh, V, k, h / 2)
        err = max(abs(t2 - t1), abs(l2 - l1))
        if err <= tol or h < 1e-9:
            # Richardson-corrected double half step
            theta = t2 + (t2 - t1) / 15
            logR = l2 + (l2 - l1) / 15
            x += h
            if err < tol / 64:
                h = min(2 * h, cap)
        else:
            h /= 2
    return theta, logR


def flow_interval(u: SingleSitePotential, coupling: float, state: PrueferState,
                  start: float = 0.0, stop: float = 1.0, tol: float = FLOW_TOL) -> PrueferState:
    """Integrate the Pruefer equations over [start, stop] within one cell."""
    lengths, heights = u.pieces()
    edges = np.concatenate([[0.0], np.cumsum(lengths)])
    theta, logR, k = state.theta, state.log_R, state.k
    for j in range(len(lengths)):
        lo = max(edges[j], start)
        hi = min(edges[j + 1], stop)
        if hi > lo:
            theta, logR = _flow_piece(theta, logR, coupling * heights[j], k, hi - lo, tol)
    return PrueferState(logR, theta, k)


def flow_cell(realization: DisorderRealization, n: int, state: PrueferState, E: float) -> PrueferState:
    """Pruefer state at x = n + 1 from the state at x = n."""
    if abs(state.k - math.sqrt(E)) > 1e-12 * max(1.0, state.k):
        raise ValueError("state.k must equal sqrt(E)")
    c = float(realization.couplings(n, n)[0])
    return flow_interval(realization.config.single_site, c, state)


def winding_count(theta_start: float, theta_end: float) -> int:
    return int(math.floor(theta_end / math.pi) - math.floor(theta_start / math.pi))


@dataclass(frozen=True)
class MartingaleDecomposition:
    term1: float
    term2: float
    term3: float
    term4: float
    residual: float
    drift_prediction: float

    @property
    def total(self) -> float:
        return self.term1 + self.term2 + self.term3 + self.term4 + self.residual


def _segment_moment(f, lo, hi):
    """(int_lo^hi e^{ify} dy, int_lo^hi (y - lo) e^{ify} dy)."""
    w = hi - lo
    if f == 0:
        return complex(w), complex(w * w / 2)
    a = np.exp(1j * f * lo)
    b = np.exp(1j * f * hi)
    i0 = (b - a) / (1j * f)
    i1 = w * b / (1j * f) - (b - a) / (1j * f) ** 2
    return complex(i0), complex(i1)


def second_order_fourier(u: SingleSitePotential, frequency: float) -> complex:
    """int_0^1 u(y) U(y) e^{i f y} dy with U(y) = int_0^y u."""
    total = 0j
    U = 0.0
    for (lo, hi), h in u.segments:
        i0, i1 = _segment_moment(frequency, lo, hi)
        total += h * (U * i0 + h * i1)
        U += h * (hi - lo)
    return total


@dataclass(frozen=True)
class MartingaleCoefficients:
    """Single-site integrals entering the decomposition at k."""

    k: float
    u_hat: complex
    g_hat: complex
    nu: float

    @classmethod
    def build(cls, u: SingleSitePotential, k: float) -> "MartingaleCoefficients":
        uh = single_site_fourier(u, 2 * k)
        gh = second_order_fourier(u, 2 * k)
        # With nu = -arg(u_hat)/2 the oscillating part of the second-order
        # term is exactly |u_hat|^2 cos(4 (theta - nu)).
        return cls(k, uh, gh, -0.5 * float(np.angle(uh)))


def martingale_terms(u: SingleSitePotential, couplings: np.ndarray, k: float, theta0,
                     upto=None) -> np.ndarray:
    """Per-sample terms for a batch of coupling sequences.

    ``couplings`` has shape (B, L): lam a_j omega_j for the cells j = m..n-1.
    ``theta0`` is the initial angle at x = m (scalar or shape (B,)).
    Returns shape (B, 6): term1..term4, residual, exact log R increment.
    With ``upto`` (cell counts from m) the sums are reported at each of
    those lengths and the result has shape (B, len(upto), 6).
    Angles along the way come from exact transfer matrices.
    """
    couplings = np.atleast_2d(np.asarray(couplings, dtype=float))
    B, L = couplings.shape
    co = MartingaleCoefficients.build(u, k)
    theta0 = np.broadcast_to(np.asarray(theta0, dtype=float), (B,))
    v0 = np.stack([np.sin(theta0), k * np.cos(theta0)], axis=-1)
    mats = cell_matrices(u, couplings, k * k)
    dirs, logs = sweep(mats, v0, record=True, metric_k=k)
    theta = np.arctan2(dirs[:, :-1, 0], dirs[:, :-1, 1] / k)
    e2 = np.exp(2j * theta)
    c = couplings
    amp = abs(co.u_hat) ** 2
    per_cell = np.stack([
        c / (2 * k) * (e2 * co.u_hat).imag,
        -c * c / (2 * k * k) * (e2 * co.g_hat).real,
        c * c / (8 * k * k) * amp * np.cos(4 * (theta - co.nu)),
        c * c / (8 * k * k) * amp,
    ], axis=-1)
    cols = [L] if upto is None else [int(n) for n in upto]
    if min(cols) < 1 or max(cols) > L:
        raise ValueError("checkpoints must lie in 1..L")
    cum = np.cumsum(per_cell, axis=1)
    terms = cum[:, np.array(cols) - 1, :]
    total = logs[:, cols] - logs[:, :1]
    res = total - terms.sum(axis=-1)
    out = np.concatenate([terms, res[..., None], total[..., None]], axis=-1)
    return out[:, 0, :] if upto is None else out


def martingale_decompose(realization: DisorderRealization, m: int, n: int, E: float,
                         theta0: float) -> MartingaleDecomposition:
    """Split log R(n) - log R(m) into the four sums and a residual."""
    if m < 1:
        raise ValueError("martingale decomposition is indexed from cell 1")
    if n <= m:
        raise ValueError("need m < n")
    if E <= 0:
        raise ValueError("energy must be positive")
    cfg = realization.config
    k = math.sqrt(E)
    row = martingale_terms(cfg.single_site, realization.couplings(m, n - 1)[None, :], k, theta0)[0]
    uh = single_site_fourier(cfg.single_site, 2 * k)
    env = cfg.envelope_values(np.arange(m, n))
    drift = cfg.lam ** 2 * abs(uh) ** 2 / (8 * E) * math.fsum(env * env)
    return MartingaleDecomposition(*map(float, row[:5]), drift_prediction=float(drift))

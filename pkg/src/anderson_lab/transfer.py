"""Exact transfer matrices for -phi'' + (lam V - E) phi = 0.

Matrices act on column vectors (phi, phi'). Across a piece of constant
potential q and length l, with z = E - q,

    [[C, S], [-z S, C]],   C = cos(sqrt(z) l),  S = sin(sqrt(z) l) / sqrt(z),

continued to cosh/sinh for z < 0 and to a Taylor series near z = 0.
All routines broadcast over leading axes so many samples or energies can be
propagated together.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import DisorderRealization, SingleSitePotential

SERIES_THRESHOLD = 1e-8


def piece_coefficients(z, length):
    """(C, S) of the constant-coefficient propagator, elementwise in z."""
    z = np.asarray(z, dtype=float)
    length = np.asarray(length, dtype=float)
    x2 = z * length * length
    r = np.sqrt(np.abs(z))
    rl = r * length
    small = np.abs(x2) < SERIES_THRESHOLD
    safe_r = np.where(r == 0, 1.0, r)
    with np.errstate(over="ignore", invalid="ignore"):
        C = np.where(z > 0, np.cos(rl), np.cosh(rl))
        S = np.where(z > 0, np.sin(rl), np.sinh(rl)) / safe_r
    C_ser = 1.0 - x2 / 2.0 + x2 * x2 / 24.0
    S_ser = length * (1.0 - x2 / 6.0 + x2 * x2 / 120.0)
    C = np.where(small, C_ser, C)
    S = np.where(small, S_ser, S)
    return C, S


def _assemble(C, S, z):
    C, S, z = np.broadcast_arrays(C, S, z)
    out = np.empty(C.shape + (2, 2))
    out[..., 0, 0] = C
    out[..., 0, 1] = S
    out[..., 1, 0] = -z * S
    out[..., 1, 1] = C
    return out


def constant_step(q, E, length) -> np.ndarray:
    """Transfer matrix across [x, x + length] where the potential equals q."""
    if np.any(np.asarray(length) <= 0):
        raise ValueError("length must be positive")
    z = np.asarray(E, dtype=float) - np.asarray(q, dtype=float)
    C, S = piece_coefficients(z, length)
    return _assemble(C, S, z)


def inverse(T: np.ndarray) -> np.ndarray:
    """Inverse of unimodular 2x2 matrices (adjugate)."""
    out = np.empty_like(T)
    out[..., 0, 0] = T[..., 1, 1]
    out[..., 0, 1] = -T[..., 0, 1]
    out[..., 1, 0] = -T[..., 1, 0]
    out[..., 1, 1] = T[..., 0, 0]
    return out


def op_norm(T: np.ndarray) -> np.ndarray:
    """Largest singular value of 2x2 matrices."""
    s = np.sum(T * T, axis=(-2, -1))
    det = np.abs(T[..., 0, 0] * T[..., 1, 1] - T[..., 0, 1] * T[..., 1, 0])
    return 0.5 * (np.sqrt(s + 2 * det) + np.sqrt(np.maximum(s - 2 * det, 0.0)))


def cell_piece_potentials(u: SingleSitePotential, couplings) -> tuple[np.ndarray, np.ndarray]:
    """Piece lengths (p,) and piece potentials (..., p) for cells with given couplings."""
    lengths, heights = u.pieces()
    q = np.asarray(couplings, dtype=float)[..., None] * heights
    return lengths, q


def cell_matrices(u: SingleSitePotential, couplings, E) -> np.ndarray:
    """Unit-cell transfer matrices for an array of cell couplings lam a_n omega_n.

    ``couplings`` has shape (...,); ``E`` must broadcast against it.
    Returns shape (..., 2, 2). The leftmost piece acts first.
    """
    lengths, q = cell_piece_potentials(u, couplings)
    E = np.asarray(E, dtype=float)
    a = b = c = d = None
    for j, ell in enumerate(lengths):
        z = E - q[..., j]
        C, S = piece_coefficients(z, ell)
        D = -z * S
        if a is None:
            a, b, c, d = C, S, D, C
        else:
            a, b, c, d = C * a + S * c, C * b + S * d, D * a + C * c, D * b + C * d
    a, b, c, d = np.broadcast_arrays(a, b, c, d)
    return np.stack([np.stack([a, b], axis=-1), np.stack([c, d], axis=-1)], axis=-2)


def unit_cell_transfer(realization: DisorderRealization, n: int, E: float) -> np.ndarray:
    """T_n(E): transfer matrix from x = n to x = n + 1."""
    c = realization.couplings(n, n)[0]
    return cell_matrices(realization.config.single_site, c, E)


@dataclass(frozen=True)
class PropagationResult:
    direction: np.ndarray
    log_norm: float
    cell_trace: Optional[np.ndarray] = None


def sweep(mats: np.ndarray, v0: np.ndarray, record: bool = False, metric_k=None):
    """Apply mats[..., 0, :, :], mats[..., 1, :, :], ... to v0 in order.

    ``mats`` has shape (..., n, 2, 2) and ``v0`` shape (..., 2). The vector is
    renormalized after every cell. With ``metric_k`` the norm used for the
    renormalization is sqrt(phi^2 + phi'^2 / k^2) instead of the Euclidean one.

    Returns (direction, log_norm) or, with ``record``, per-boundary arrays
    (directions (..., n+1, 2), log_norms (..., n+1)).
    """
    n = mats.shape[-3]
    lead = mats.shape[:-3]
    v = np.array(np.broadcast_to(v0, lead + (2,)), dtype=float)
    x, y = v[..., 0].copy(), v[..., 1].copy()
    ik2 = 1.0 if metric_k is None else 1.0 / (metric_k * metric_k)
    # cell axis first so each step reads contiguous slices
    m = np.ascontiguousarray(np.moveaxis(mats, -3, 0))
    a, b, c, d = m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]
    nrm = np.sqrt(x * x + ik2 * y * y)
    x /= nrm
    y /= nrm
    L = np.log(nrm)
    if record:
        dirs = np.empty((n + 1,) + lead + (2,))
        logs = np.empty((n + 1,) + lead)
        dirs[0, ..., 0] = x
        dirs[0, ..., 1] = y
        logs[0] = L
    for j in range(n):
        x, y = a[j] * x + b[j] * y, c[j] * x + d[j] * y
        nrm = np.sqrt(x * x + ik2 * y * y)
        x /= nrm
        y /= nrm
        L = L + np.log(nrm)
        if record:
            dirs[j + 1, ..., 0] = x
            dirs[j + 1, ..., 1] = y
            logs[j + 1] = L
    if record:
        return np.moveaxis(dirs, 0, -2), np.moveaxis(logs, 0, -1)
    return np.stack([x, y], axis=-1), L


def propagate(realization: DisorderRealization, m: int, n: int, E: float, psi0,
              trace: bool = False) -> PropagationResult:
    """T(n, m; E) psi0 in overflow-safe form (unit direction and log norm)."""
    psi0 = np.asarray(psi0, dtype=float)
    if abs(np.hypot(*psi0) - 1.0) > 1e-12:
        raise ValueError("psi0 must be a unit vector")
    if n == m:
        return PropagationResult(psi0.copy(), 0.0, np.zeros(0) if trace else None)
    u = realization.config.single_site
    if n > m:
        realization.check_cells(m, n - 1)
        mats = cell_matrices(u, realization.couplings(m, n - 1), E)
    else:
        realization.check_cells(n, m - 1)
        mats = inverse(cell_matrices(u, realization.couplings(n, m - 1), E))[::-1]
    if trace:
        dirs, logs = sweep(mats, psi0, record=True)
        return PropagationResult(dirs[-1], float(logs[-1]), np.diff(logs))
    v, L = sweep(mats, psi0)
    return PropagationResult(v, float(L))


def apriori_bound(realization: DisorderRealization, a: int, b: int, E: float) -> float:
    """exp(1/2 int_a^b |1 + lam V - E|), which bounds ||T(x, y; E)||^{+-1} on [a, b]."""
    if b <= a:
        return 1.0
    realization.check_cells(a, b - 1)
    lengths, q = cell_piece_potentials(realization.config.single_site, realization.couplings(a, b - 1))
    return float(np.exp(0.5 * np.sum(lengths * np.abs(1.0 + q - E))))

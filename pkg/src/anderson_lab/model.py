"""Random potential ingredients: envelope, single-site bump, disorder law.

The operator is H = -d^2/dx^2 + lam * sum_n a_n omega_n u(x - n) on the line.
Everything here is immutable; a realization is a pure function of
(config, window, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

SQRT3 = math.sqrt(3.0)
SQRT6 = math.sqrt(6.0)

# Largest number of cells a single realization may cover.
DEFAULT_MAX_WINDOW = 2_000_000


class WindowError(ValueError):
    """Raised when a cell or point lies outside a realization's window."""


class ResourceGuardError(RuntimeError):
    """Raised when a request exceeds a configured size limit."""


@dataclass(frozen=True)
class SingleSitePotential:
    """Piecewise-constant bump supported in (0, 1).

    ``segments`` is a tuple of ``((lo, hi), height)`` with disjoint sorted
    intervals. ``c_u``/``J`` describe the lower bound c_u * chi_J <= u and
    ``C_u`` the upper bound u <= C_u.
    """

    segments: tuple[tuple[tuple[float, float], float], ...]
    c_u: float
    C_u: float
    J: tuple[float, float]

    def __post_init__(self):
        segs = tuple(((float(lo), float(hi)), float(h)) for (lo, hi), h in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("single-site potential needs at least one segment")
        prev_hi = 0.0
        for (lo, hi), h in segs:
            if not (0.0 < lo < hi < 1.0):
                raise ValueError(f"segment ({lo}, {hi}) must lie inside (0, 1)")
            if lo < prev_hi:
                raise ValueError("segments must be disjoint and sorted")
            if h < 0 or h > self.C_u:
                raise ValueError(f"segment height {h} outside [0, C_u={self.C_u}]")
            prev_hi = hi
        jlo, jhi = self.J
        if not (0.0 < jlo < jhi < 1.0) or self.c_u <= 0:
            raise ValueError("need a nontrivial J inside (0, 1) and c_u > 0")
        if self.value(np.linspace(jlo, jhi, 257)[1:-1]).min() < self.c_u:
            raise ValueError("u is not bounded below by c_u on J")

    @classmethod
    def default(cls) -> "SingleSitePotential":
        return cls(segments=(((0.25, 0.75), 1.0),), c_u=1.0, C_u=1.0, J=(0.25, 0.75))

    def value(self, y):
        """u(y) for y in [0, 1); half-open segments [lo, hi)."""
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for (lo, hi), h in self.segments:
            out = np.where((y >= lo) & (y < hi), h, out)
        return out

    def pieces(self) -> tuple[np.ndarray, np.ndarray]:
        """Split [0, 1] into constant pieces: (lengths, heights), left to right."""
        lengths, heights = [], []
        x = 0.0
        for (lo, hi), h in self.segments:
            if lo > x:
                lengths.append(lo - x)
                heights.append(0.0)
            lengths.append(hi - lo)
            heights.append(h)
            x = hi
        if x < 1.0:
            lengths.append(1.0 - x)
            heights.append(0.0)
        return np.array(lengths), np.array(heights)

    def mass(self) -> float:
        return sum((hi - lo) * h for (lo, hi), h in self.segments)

    def sup(self) -> float:
        return max(h for _, h in self.segments)


@dataclass(frozen=True)
class DisorderSpec:
    """Law of the i.i.d. couplings omega_n.

    Families: ``uniform`` on [-sqrt3, sqrt3], ``triangular`` on
    [-sqrt6, sqrt6] (both mean 0, variance 1), and ``zero`` (omega = 0,
    a degenerate law used for free-operator baselines).
    """

    family: str = "uniform"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in ("uniform", "triangular", "zero"):
            raise ValueError(f"unknown disorder family {self.family!r}")
        if self.family != "zero":
            m0 = integrate.quad(self.density, *self.support, points=[0.0])[0]
            m1 = integrate.quad(lambda w: w * self.density(w), *self.support, points=[0.0])[0]
            m2 = integrate.quad(lambda w: w * w * self.density(w), *self.support, points=[0.0])[0]
            if abs(m0 - 1) > 1e-10 or abs(m1) > 1e-10 or abs(m2 - 1) > 1e-10:
                raise ValueError(f"{self.family} law is not normalized to mean 0, variance 1")

    @property
    def support(self) -> tuple[float, float]:
        if self.family == "uniform":
            return (-SQRT3, SQRT3)
        if self.family == "triangular":
            return (-SQRT6, SQRT6)
        return (0.0, 0.0)

    @property
    def density_sup(self) -> float:
        if self.family == "uniform":
            return 1.0 / (2.0 * SQRT3)
        if self.family == "triangular":
            return 1.0 / SQRT6
        return math.inf

    def density(self, w):
        w = np.asarray(w, dtype=float)
        lo, hi = self.support
        if self.family == "uniform":
            return np.where((w >= lo) & (w <= hi), 1.0 / (hi - lo), 0.0)
        if self.family == "triangular":
            return np.clip((hi - np.abs(w)) / (hi * hi), 0.0, None)
        raise ValueError("zero disorder has no density")

    def cdf(self, w):
        w = np.asarray(w, dtype=float)
        lo, hi = self.support
        if self.family == "uniform":
            return np.clip((w - lo) / (hi - lo), 0.0, 1.0)
        if self.family == "triangular":
            c = np.clip(w, lo, hi)
            left = (c - lo) ** 2 / (2 * hi * hi)
            right = 1.0 - (hi - c) ** 2 / (2 * hi * hi)
            return np.where(c < 0, left, right)
        return (w >= 0).astype(float)

    def from_uniform(self, p: np.ndarray) -> np.ndarray:
        """Inverse CDF applied to uniforms in [0, 1)."""
        lo, hi = self.support
        if self.family == "uniform":
            return lo + (hi - lo) * p
        if self.family == "triangular":
            left = lo + hi * np.sqrt(2.0 * p)
            right = hi - hi * np.sqrt(2.0 * (1.0 - p))
            return np.where(p < 0.5, left, right)
        return np.zeros_like(p)


@dataclass(frozen=True)
class ModelConfig:
    alpha: float
    lam: float
    envelope: str = "power"
    disorder: DisorderSpec = field(default_factory=DisorderSpec)
    single_site: SingleSitePotential = field(default_factory=SingleSitePotential.default)
    max_window: int = DEFAULT_MAX_WINDOW

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.lam == 0:
            raise ValueError("coupling lambda must be nonzero (use the 'zero' disorder family)")
        if self.envelope != "power":
            raise ValueError(f"unknown envelope rule {self.envelope!r}")

    def envelope_values(self, n) -> np.ndarray:
        n = np.asarray(n)
        return np.maximum(1.0, np.abs(n).astype(float)) ** (-self.alpha)


def envelope_value(config: ModelConfig, n: int) -> float:
    """a_n = max(1, |n|)^(-alpha)."""
    return float(config.envelope_values(n))


def _streams(seed: int) -> list[np.random.Generator]:
    # Nonnegative cells, negative cells, auxiliary draws.
    ss = np.random.SeedSequence(int(seed))
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def aux_rng(seed: int) -> np.random.Generator:
    """Generator for per-sample randomness that is not part of the potential."""
    return _streams(seed)[2]


@dataclass(frozen=True, eq=False)
class DisorderRealization:
    """Couplings omega_n for n in [n_min, n_max].

    omega_n depends only on (seed, n): cell n >= 0 takes the n-th draw of one
    stream and cell n < 0 the (|n|-1)-th draw of another, so nested windows
    share their common values.
    """

    config: ModelConfig
    n_min: int
    n_max: int
    seed: int
    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def window(self) -> tuple[int, int]:
        return (self.n_min, self.n_max)

    def check_cells(self, lo: int, hi: int):
        if lo < self.n_min or hi > self.n_max:
            raise WindowError(f"cells [{lo}, {hi}] outside window [{self.n_min}, {self.n_max}]")

    def omega(self, n):
        n = np.asarray(n)
        if np.any(n < self.n_min) or np.any(n > self.n_max):
            raise WindowError(f"cell index outside window [{self.n_min}, {self.n_max}]")
        return self.values[n - self.n_min]

    def couplings(self, lo: int, hi: int) -> np.ndarray:
        """lam * a_n * omega_n for n = lo..hi inclusive."""
        self.check_cells(lo, hi)
        n = np.arange(lo, hi + 1)
        return self.config.lam * self.config.envelope_values(n) * self.values[lo - self.n_min:hi + 1 - self.n_min]


def draw_omegas(config: ModelConfig, n_min: int, n_max: int, seed: int) -> np.ndarray:
    if n_max < n_min:
        raise ValueError("empty window")
    if n_max - n_min + 1 > config.max_window or max(abs(n_min), abs(n_max)) >= config.max_window:
        raise ResourceGuardError(
            f"window [{n_min}, {n_max}] exceeds the limit of {config.max_window} cells")
    pos, neg, _ = _streams(seed)
    out = np.empty(n_max - n_min + 1)
    if n_max >= 0:
        p = pos.random(n_max + 1)
        lo = max(n_min, 0)
        out[lo - n_min:] = p[lo:]
    if n_min < 0:
        p = neg.random(-n_min)
        hi = min(n_max, -1)
        idx = -np.arange(n_min, hi + 1) - 1
        out[:hi + 1 - n_min] = p[idx]
    return config.disorder.from_uniform(out)


def sample_realization(config: ModelConfig, window: tuple[int, int], seed: int) -> DisorderRealization:
    n_min, n_max = int(window[0]), int(window[1])
    values = draw_omegas(config, n_min, n_max, seed)
    return DisorderRealization(config, n_min, n_max, int(seed), values)


def realization_from_values(config: ModelConfig, n_min: int, values, seed: int = -1) -> DisorderRealization:
    """Realization with prescribed couplings (for tests and hand-built cases)."""
    values = np.array(values, dtype=float)
    return DisorderRealization(config, n_min, n_min + len(values) - 1, seed, values)


def eval_potential(realization: DisorderRealization, x):
    """lam * V_omega(x); only the cell floor(x) contributes."""
    x = np.asarray(x, dtype=float)
    n = np.floor(x).astype(np.int64)
    c = realization.config
    w = realization.omega(n)
    return c.lam * c.envelope_values(n) * w * c.single_site.value(x - n)


def single_site_fourier(u: SingleSitePotential, frequency: float) -> complex:
    """Closed form of the integral of u(y) exp(i f y) over [0, 1]."""
    f = float(frequency)
    total = 0j
    for (lo, hi), h in u.segments:
        w = hi - lo
        mid = 0.5 * (lo + hi)
        # exp(i f mid) * w * sin(f w / 2) / (f w / 2); np.sinc(t) = sin(pi t)/(pi t)
        total += h * np.exp(1j * f * mid) * w * np.sinc(f * w / (2 * np.pi))
    return complex(total)

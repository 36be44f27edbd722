"""Deterministic seed stream and order-fixed parallel Monte Carlo.

Sample i of a run with root seed r uses the 64-bit seed

    int.from_bytes(blake2b(pack('<QQ', r, i), digest_size=8).digest(), 'little')

which is fixed forever. Samples are grouped into chunks of ``CHUNK`` by
index; a chunk is the unit of work sent to a worker, and chunk results are
folded in index order, so the numbers never depend on the worker count.
"""

from __future__ import annotations

import hashlib
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

CHUNK = 64
MASK64 = (1 << 64) - 1


def sample_seed(root_seed: int, index: int) -> int:
    payload = struct.pack("<QQ", int(root_seed) & MASK64, int(index) & MASK64)
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def sample_seeds(root_seed: int, start: int, stop: int) -> np.ndarray:
    return np.array([sample_seed(root_seed, i) for i in range(start, stop)], dtype=np.uint64)


def default_workers() -> int:
    env = os.environ.get("LAB_WORKERS")
    if env:
        return max(1, int(env))
    return 1


@dataclass(frozen=True)
class EstimatorResult:
    mean: float
    std_error: float
    n_samples: int
    root_seed: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "n_samples": self.n_samples,
                "root_seed": self.root_seed, "metadata": dict(self.metadata)}

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorResult":
        return cls(float(d["mean"]), float(d["std_error"]), int(d["n_samples"]),
                   int(d["root_seed"]), dict(d.get("metadata", {})))


class Welford:
    """One-pass mean/variance over rows, one accumulator per column."""

    def __init__(self, width: int):
        self.n = 0
        self.mean = np.zeros(width)
        self.m2 = np.zeros(width)

    def push(self, row):
        row = np.asarray(row, dtype=float)
        self.n += 1
        delta = row - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + delta * (row - self.mean)

    def extend(self, rows):
        for row in np.atleast_2d(rows):
            self.push(row)

    def std_error(self) -> np.ndarray:
        if self.n < 2:
            return np.full_like(self.mean, np.nan)
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


def _run_chunk(kernel, root_seed, start, stop):
    return kernel(sample_seeds(root_seed, start, stop))


def map_samples(kernel: Callable[[np.ndarray], np.ndarray], n_samples: int, root_seed: int,
                workers: int | None = None) -> np.ndarray:
    """Evaluate ``kernel`` on every sample seed and return rows in index order.

    ``kernel`` maps an array of seeds to an array of shape (len(seeds), ...).
    It must be picklable when ``workers > 1``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    workers = default_workers() if workers is None else max(1, int(workers))
    bounds = [(s, min(s + CHUNK, n_samples)) for s in range(0, n_samples, CHUNK)]
    if workers == 1 or len(bounds) == 1:
        parts = [_run_chunk(kernel, root_seed, a, b) for a, b in bounds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, kernel, root_seed, a, b) for a, b in bounds]
            parts = [f.result() for f in futures]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts], axis=0)


def summarize(rows: np.ndarray, root_seed: int, metadata: dict | None = None) -> list[EstimatorResult]:
    """Column-wise EstimatorResults from per-sample rows (NaN rows are skipped)."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    out = []
    for j in range(rows.shape[1]):
        col = rows[:, j]
        col = col[np.isfinite(col)]
        acc = Welford(1)
        acc.extend(col[:, None])
        out.append(EstimatorResult(float(acc.mean[0]), float(acc.std_error()[0]), int(acc.n),
                                   int(root_seed), dict(metadata or {})))
    return out

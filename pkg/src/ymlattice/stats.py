"""Batch-means estimators with error bars."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EstimateWithError:
    mean: float
    stderr: float
    n_batches: int
    n_samples: int
    sample_var: float = float("nan")

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")

    @property
    def n_eff(self) -> float:
        # effective sample count implied by the batch-means error
        if np.isnan(self.sample_var):
            return float("nan")
        return float("inf") if self.stderr == 0 else float(self.sample_var / self.stderr ** 2)

    def zscore(self, other: "EstimateWithError | float") -> float:
        if isinstance(other, EstimateWithError):
            s = np.hypot(self.stderr, other.stderr)
            d = self.mean - other.mean
        else:
            s = self.stderr
            d = self.mean - float(other)
        return float("inf") if s == 0 and d != 0 else (0.0 if s == 0 else abs(d) / s)

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_batches": self.n_batches,
                "n_samples": self.n_samples, "n_eff": self.n_eff}


def _batches(x: np.ndarray, n_batches: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if n_batches < 8:
        raise ValueError("at least 8 batches are required")
    b = len(x) // n_batches
    if b < 1:
        raise ValueError(f"{len(x)} samples cannot fill {n_batches} batches")
    return x[: b * n_batches].reshape((n_batches, b) + x.shape[1:])


def batch_mean(x, n_batches: int = 32) -> EstimateWithError:
    xb = _batches(x, n_batches)
    m = xb.mean(axis=1)
    se = m.std(ddof=1) / np.sqrt(n_batches)
    n = xb.shape[0] * xb.shape[1]
    return EstimateWithError(float(m.mean()), float(se), n_batches, n, float(np.var(xb, ddof=1)))


def batch_covariance(x, y, n_batches: int = 32) -> EstimateWithError:
    """Cov(x, y) with a jackknife-over-batches error bar."""
    xb = _batches(x, n_batches)
    yb = _batches(y, n_batches)
    sx, sy, sxy = xb.sum(1), yb.sum(1), (xb * yb).sum(1)
    b = xb.shape[1]
    n = n_batches * b

    def cov(SX, SY, SXY, m):
        return SXY / m - (SX / m) * (SY / m)

    full = cov(sx.sum(), sy.sum(), sxy.sum(), n)
    jk = np.array([cov(sx.sum() - sx[i], sy.sum() - sy[i], sxy.sum() - sxy[i], n - b)
                   for i in range(n_batches)])
    se = np.sqrt((n_batches - 1) / n_batches * np.sum((jk - jk.mean()) ** 2))
    pv = np.var((xb - xb.mean()) * (yb - yb.mean()), ddof=1)
    return EstimateWithError(float(full), float(se), n_batches, n, float(pv))


def batch_function(arrays: list, fn, n_batches: int = 32) -> EstimateWithError:
    """Jackknife over batches for a smooth function of sample means."""
    bs = [_batches(a, n_batches) for a in arrays]
    sums = [b.sum(1) for b in bs]
    m = bs[0].shape[1]
    n = n_batches * m
    full = fn(*[s.sum(0) / n for s in sums])
    jk = np.array([fn(*[(s.sum(0) - s[i]) / (n - m) for s in sums]) for i in range(n_batches)])
    se = np.sqrt((n_batches - 1) / n_batches * np.sum((jk - jk.mean()) ** 2))
    return EstimateWithError(float(full), float(se), n_batches, n)


@dataclass
class Moments:
    """Associative accumulator of (sum, sum of squares, count)."""

    s: float = 0.0
    ss: float = 0.0
    n: int = 0

    def add(self, x):
        x = np.asarray(x, dtype=float).ravel()
        self.s += float(x.sum())
        self.ss += float((x * x).sum())
        self.n += x.size
        return self

    def merge(self, other: "Moments") -> "Moments":
        return Moments(self.s + other.s, self.ss + other.ss, self.n + other.n)

    @property
    def mean(self) -> float:
        return self.s / self.n

    @property
    def var(self) -> float:
        return (self.ss - self.s ** 2 / self.n) / (self.n - 1)


def combine_estimates(ests: list[EstimateWithError]) -> EstimateWithError:
    """Sample-count weighted merge of independent chains' estimates."""
    w = np.array([e.n_samples for e in ests], dtype=float)
    w = w / w.sum()
    mean = float(np.sum(w * [e.mean for e in ests]))
    se = float(np.sqrt(np.sum((w * [e.stderr for e in ests]) ** 2)))
    sv = float(np.sum(w * [e.sample_var for e in ests]))
    return EstimateWithError(mean, se, sum(e.n_batches for e in ests), sum(e.n_samples for e in ests), sv)

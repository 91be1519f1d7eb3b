"""Aggregate statistics for runs x seeds score matrices.

Statistics operate on the last axis so bootstrap replicates can be evaluated
in one vectorized call: ``stat(x)`` maps (..., n) -> (...).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_matrix(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("score matrix must be a non-empty (tasks, seeds) array")
    if not np.all(np.isfinite(m)):
        raise ValueError("score matrix has missing or non-finite entries")
    return m


def iqm_weights(n: int) -> np.ndarray:
    """Weight of each sorted element: its overlap [i/n, (i+1)/n] with [0.25, 0.75], normalized."""
    lo = np.arange(n) / n
    overlap = np.clip(np.minimum(lo + 1.0 / n, 0.75) - np.maximum(lo, 0.25), 0.0, None)
    return overlap / overlap.sum()


def iqm(scores) -> float | np.ndarray:
    """Interquartile mean with fractional trimming when n is not a multiple of 4."""
    x = np.asarray(scores, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("iqm of an empty sample")
    return np.sort(x, axis=-1) @ iqm_weights(x.shape[-1])


def mean(x):
    return np.mean(x, axis=-1)


def median(x):
    return np.median(x, axis=-1)


def optimality_gap(scores, threshold: float = 100.0):
    if not threshold > 0:
        raise ValueError("optimality-gap threshold must be positive")
    return np.mean(np.maximum(0.0, threshold - np.asarray(scores, dtype=np.float64)), axis=-1)


STATISTICS = {"median": median, "iqm": iqm, "mean": mean, "optimality_gap": optimality_gap}


def _resample(m: np.ndarray, b: int, rng: np.random.Generator) -> np.ndarray:
    """(B, tasks, seeds) with seeds drawn with replacement independently per task."""
    tasks, seeds = m.shape
    idx = rng.integers(0, seeds, (b, tasks, seeds))
    return m[np.arange(tasks)[None, :, None], idx]


def stratified_bootstrap_ci(matrix, statistic=mean, b: int = 2000, level: float = 0.95, rng=None):
    """Percentile interval of ``statistic`` over stratified resamples of the flattened matrix."""
    if b < 100:
        raise ValueError("use at least 100 bootstrap resamples")
    m = _as_matrix(matrix)
    rng = np.random.default_rng(0) if rng is None else rng
    reps = statistic(_resample(m, b, rng).reshape(b, -1))
    alpha = 0.5 * (1.0 - level)
    low, high = np.quantile(reps, [alpha, 1.0 - alpha])
    return float(low), float(high)


def performance_profile(matrix, thresholds) -> np.ndarray:
    """F(eta) = mean over tasks of the fraction of seeds scoring at least eta."""
    m = _as_matrix(matrix)
    eta = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(eta) < 0):
        raise ValueError("thresholds must be ascending")
    return np.mean(m[None, :, :] >= eta[:, None, None], axis=(1, 2))


def profile_band(matrix, thresholds, b: int = 2000, level: float = 0.95, rng=None):
    m = _as_matrix(matrix)
    rng = np.random.default_rng(0) if rng is None else rng
    eta = np.asarray(thresholds, dtype=np.float64)
    reps = _resample(m, b, rng)
    curves = np.mean(reps[:, None] >= eta[None, :, None, None], axis=(2, 3))
    alpha = 0.5 * (1.0 - level)
    return np.quantile(curves, alpha, axis=0), np.quantile(curves, 1.0 - alpha, axis=0)


@dataclass(frozen=True)
class Estimate:
    point: float
    low: float
    high: float


@dataclass(frozen=True)
class AggregateReport:
    estimates: dict[str, Estimate]
    thresholds: np.ndarray
    profile: np.ndarray
    profile_low: np.ndarray
    profile_high: np.ndarray


def aggregate(matrix, thresholds=None, b: int = 2000, level: float = 0.95, gap_threshold: float = 100.0, rng=None):
    """Point estimates and bootstrap intervals for every statistic plus the profile curve.

    Intervals are widened to contain the point estimate when the percentile
    interval misses it (possible for the median on tiny matrices).
    """
    m = _as_matrix(matrix)
    rng = np.random.default_rng(0) if rng is None else rng
    stats = dict(STATISTICS, optimality_gap=lambda x: optimality_gap(x, gap_threshold))
    estimates = {}
    for name, fn in stats.items():
        point = float(fn(m.ravel()))
        low, high = stratified_bootstrap_ci(m, fn, b, level, rng)
        estimates[name] = Estimate(point, min(low, point), max(high, point))
    if thresholds is None:
        thresholds = np.linspace(min(0.0, m.min()), max(100.0, m.max()), 21)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    lo, hi = profile_band(m, thresholds, b, level, rng)
    return AggregateReport(estimates, thresholds, performance_profile(m, thresholds), lo, hi)

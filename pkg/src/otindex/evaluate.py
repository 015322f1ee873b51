"""Comparison of a generated index against a reference series.

Both series are decomposed by the Hodrick-Prescott filter, correlated raw
and per component, and accumulated into a running-difference curve.  All
alignment is an inner join on months; nothing is interpolated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded

from .errors import InsufficientOverlap, NoOverlap, SeriesTooShort, ZeroVariance
from .index import IndexSeries

MONTHLY_HP_LAMBDA = 129600.0


def hp_filter(series, smoothing: float):
    """Split a series into smooth trend and cycle.

    The trend solves ``(I + smoothing * D^T D) trend = series`` with ``D``
    the second-difference operator, via a symmetric pentadiagonal banded
    solve; the cycle is the exact residual ``series - trend``.
    """
    y = np.asarray(series, dtype=np.float64)
    n = y.shape[0]
    if n < 4:
        raise SeriesTooShort(f"HP filter needs at least 4 points, got {n}")
    if smoothing <= 0:
        raise ValueError("smoothing must be > 0")
    lam = float(smoothing)
    diag = np.full(n, 6.0 * lam)
    diag[[0, -1]] = 1.0 * lam
    diag[[1, -2]] = 5.0 * lam
    diag += 1.0
    super1 = np.full(n, -4.0 * lam)
    super1[1] = -2.0 * lam
    super1[-1] = -2.0 * lam
    super2 = np.full(n, lam)
    ab = np.zeros((3, n))
    ab[0, 2:] = super2[2:]
    ab[1, 1:] = super1[1:]
    ab[2, :] = diag
    trend = solveh_banded(ab, y, lower=False)
    return trend, y - trend


def _rank_average(x: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties receiving the average of their positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pearson(x, y) -> float:
    """Sample correlation coefficient.

    Computed as ``sign(cov) * sqrt(cov^2 / (var_x * var_y))`` so that
    identical inputs give exactly 1.0; clipped into [-1, 1].
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be equal-length vectors")
    if len(x) < 2:
        raise ValueError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0 or vy == 0:
        raise ZeroVariance("correlation undefined for a constant input")
    cov = float(dx @ dy)
    if cov == 0:
        return 0.0
    r = np.sign(cov) * np.sqrt((cov * cov) / (vx * vy))
    return float(np.clip(r, -1.0, 1.0))


def spearman(x, y) -> float:
    """Rank correlation: Pearson on average-tie ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return pearson(_rank_average(x), _rank_average(y))


def align(a: IndexSeries, b: IndexSeries):
    """Values of both series on their common months, in month order."""
    common = sorted(set(a.months) & set(b.months))
    if not common:
        raise NoOverlap("series share no months")
    ia = {m: i for i, m in enumerate(a.months)}
    ib = {m: i for i, m in enumerate(b.months)}
    va = np.array([a.values[ia[m]] for m in common])
    vb = np.array([b.values[ib[m]] for m in common])
    return tuple(common), va, vb


def cumulative_difference(a: IndexSeries, b: IndexSeries,
                          signed: bool = False) -> IndexSeries:
    """Running sum of (absolute, by default) monthly differences on common months."""
    months, va, vb = align(a, b)
    diffs = va - vb if signed else np.abs(va - vb)
    return IndexSeries(months, np.cumsum(diffs))


@dataclass(frozen=True)
class EvalReport:
    """Six correlations (raw/trend/cycle x Pearson/Spearman) plus the cumulative difference."""

    pearson_raw: float
    pearson_trend: float
    pearson_cycle: float
    spearman_raw: float
    spearman_trend: float
    spearman_cycle: float
    cumdiff: IndexSeries
    hp_lambda: float

    def correlations(self) -> dict[str, float]:
        return {
            "pearson_raw": self.pearson_raw,
            "pearson_trend": self.pearson_trend,
            "pearson_cycle": self.pearson_cycle,
            "spearman_raw": self.spearman_raw,
            "spearman_trend": self.spearman_trend,
            "spearman_cycle": self.spearman_cycle,
        }


def evaluate(index: IndexSeries, reference: IndexSeries,
             hp_lambda: float = MONTHLY_HP_LAMBDA,
             min_overlap: int = 24) -> EvalReport:
    """Full comparison on the common months of the two series."""
    months, vi, vr = align(index, reference)
    if len(months) < min_overlap:
        raise InsufficientOverlap(
            f"only {len(months)} common months; need at least {min_overlap}"
        )
    trend_i, cycle_i = hp_filter(vi, hp_lambda)
    trend_r, cycle_r = hp_filter(vr, hp_lambda)
    aligned_i = IndexSeries(months, vi)
    aligned_r = IndexSeries(months, vr)
    return EvalReport(
        pearson_raw=pearson(vi, vr),
        pearson_trend=pearson(trend_i, trend_r),
        pearson_cycle=pearson(cycle_i, cycle_r),
        spearman_raw=spearman(vi, vr),
        spearman_trend=spearman(trend_i, trend_r),
        spearman_cycle=spearman(cycle_i, cycle_r),
        cumdiff=cumulative_difference(aligned_i, aligned_r),
        hp_lambda=hp_lambda,
    )

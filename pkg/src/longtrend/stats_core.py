"""Correlation, deviation-score and VIF kernels shared by every stage.

Moments are population (divide-by-n) moments throughout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import stats

from .errors import DegenerateInputError, InputError

logger = logging.getLogger(__name__)

# 1 - R^2 below this is treated as exact collinearity.
COLLINEAR_TOL = 1e-10


@dataclass(frozen=True)
class CorrResult:
    r: float
    n: int
    p_two_sided: float

    @property
    def stars(self) -> str:
        if self.p_two_sided < 0.01:
            return "**"
        if self.p_two_sided < 0.05:
            return "*"
        return ""


def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise InputError(f"vectors must be 1-d and equal length, got {x.shape} and {y.shape}")
    if x.size < 3:
        raise InputError(f"correlation needs n >= 3, got {x.size}")
    return x, y


def correlation_p_value(r: float, n: int) -> float:
    """Two-sided p of the t test of zero correlation with ``n - 2`` df."""
    if abs(r) >= 1.0:
        return 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 2)))


def pearson(x, y) -> CorrResult:
    x, y = _pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("correlation undefined: zero variance")
    r = float(np.dot(dx, dy) / np.sqrt(sxx * syy))
    r = min(1.0, max(-1.0, r))
    return CorrResult(r=r, n=int(x.size), p_two_sided=correlation_p_value(r, x.size))


def rank_average(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(x.size, dtype=float)
    start = 0
    n = x.size
    while start < n:
        stop = start + 1
        while stop < n and sorted_x[stop] == sorted_x[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop - 1) + 1.0
        start = stop
    return ranks


def spearman(x, y) -> CorrResult:
    x, y = _pair(x, y)
    return pearson(rank_average(x), rank_average(y))


@dataclass(frozen=True)
class DeviationScoreSet:
    scores: Mapping[str, float]
    mu: float
    sigma: float


def deviation_transform(x, allow_degenerate: bool = False) -> tuple[np.ndarray, float, float]:
    """Array form of :func:`deviation_scores`: returns ``(T, mu, sigma)``."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise InputError("deviation scores need at least two students")
    mu = float(x.mean())
    sigma = float(np.sqrt(np.mean((x - mu) ** 2)))
    if sigma == 0.0 or not np.isfinite(sigma):
        if not allow_degenerate:
            raise DegenerateInputError("all scores equal; deviation scores undefined")
        logger.warning("degenerate cohort: all deviation scores set to 50")
        return np.full(x.size, 50.0), mu, 0.0
    t = 10.0 * (x - mu) / sigma + 50.0
    return t, mu, sigma


def deviation_scores(raw: Mapping[str, float], allow_degenerate: bool = False) -> DeviationScoreSet:
    """T = 10 (x - mu) / sigma + 50 over the whole cohort."""
    ids = list(raw)
    t, mu, sigma = deviation_transform([raw[s] for s in ids], allow_degenerate)
    return DeviationScoreSet(scores=dict(zip(ids, t.tolist())), mu=mu, sigma=sigma)


def auxiliary_r2(design, j: int) -> float:
    """R^2 of column ``j`` regressed (with intercept) on the other columns."""
    X = np.asarray(design, dtype=float)
    n = X.shape[0]
    y = X[:, j]
    others = np.delete(X, j, axis=1)
    A = np.column_stack([np.ones(n), others])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        return 1.0
    return 1.0 - float(resid @ resid) / sst


def vif(design) -> np.ndarray:
    """Variance inflation factors of the columns of ``design`` (no intercept column).

    Columns explained exactly by the others (including constant columns)
    get ``inf``.
    """
    X = np.asarray(design, dtype=float)
    if X.ndim != 2:
        raise InputError("design must be a 2-d matrix")
    n, p = X.shape
    if p < 2:
        raise InputError("VIF needs at least two columns")
    if n <= p:
        raise InputError(f"VIF needs more rows than columns, got {n} x {p}")
    out = np.empty(p)
    for j in range(p):
        tol = 1.0 - auxiliary_r2(X, j)
        out[j] = np.inf if tol < COLLINEAR_TOL else 1.0 / tol
    return out

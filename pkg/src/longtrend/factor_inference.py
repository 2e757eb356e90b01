"""Logistic regression of cluster membership on baseline item scores.

For a pair of trajectory clusters the target is 1 for the positive cluster
and 0 for the negative one; predictors are the binary item scores of one
baseline test. Items are thinned (constant columns, exact duplicates, then
stepwise VIF removal), the model is fit by Newton/IRLS, and items are tiered
by their Wald p-value. Topics significant in every cohort are common factors.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .data_model import ScorePanel, TestKey
from .errors import (
    DegenerateInputError,
    InputError,
    ManifestMismatchError,
    NumericalError,
    SeparationError,
    SingularMatrixError,
)
from .stats_core import COLLINEAR_TOL, auxiliary_r2
from .trend_clustering import Clustering

SEPARATION_BOUND = 15.0
RIDGE_FALLBACK = 1e-4
TIERS = ((0.01, "**"), (0.05, "*"), (0.10, "†"))


@dataclass
class DesignMatrix:
    students: list
    target: np.ndarray
    X: np.ndarray
    item_ids: list
    removal_log: list = field(default_factory=list)
    test: TestKey | None = None
    positive_label: str = ""
    negative_label: str = ""

    @property
    def shape(self):
        return self.X.shape

    def drop(self, keep: Sequence[int], reason: str, dropped: Sequence[int]) -> "DesignMatrix":
        log = self.removal_log + [(self.item_ids[j], reason) for j in dropped]
        return DesignMatrix(
            students=self.students,
            target=self.target,
            X=self.X[:, list(keep)],
            item_ids=[self.item_ids[j] for j in keep],
            removal_log=log,
            test=self.test,
            positive_label=self.positive_label,
            negative_label=self.negative_label,
        )


def build_design(panel: ScorePanel, baseline_test: TestKey, clustering: Clustering,
                 positive_label: str, negative_label: str) -> DesignMatrix:
    """Rows are students of the two clusters; columns are baseline item scores."""
    if positive_label == negative_label:
        raise InputError("positive and negative labels must differ")
    if baseline_test not in panel.tests:
        raise InputError(f"baseline test {baseline_test.test_id!r} not in panel {panel.cohort_id!r}")
    present = set(clustering.labels.values())
    for lab in (positive_label, negative_label):
        if lab not in present:
            raise InputError(f"label {lab!r} not found in clustering (labels: {sorted(present)})")
    row_of = {s: i for i, s in enumerate(panel.students)}
    students, target = [], []
    for s, c in clustering.assignment.items():
        lab = clustering.labels[c]
        if lab in (positive_label, negative_label) and s in row_of:
            students.append(s)
            target.append(1 if lab == positive_label else 0)
    target = np.array(target, dtype=int)
    for lab, val in ((positive_label, 1), (negative_label, 0)):
        if int((target == val).sum()) < 2:
            raise InputError(f"cluster {lab!r} has fewer than two students")
    items = panel.items[baseline_test.test_id]
    if not items:
        raise InputError(f"baseline test {baseline_test.test_id!r} has no items")
    resp = panel.responses[baseline_test.test_id]
    X = resp[[row_of[s] for s in students]].astype(float)
    return DesignMatrix(
        students=students,
        target=target,
        X=X,
        item_ids=[i for i, _ in items],
        test=baseline_test,
        positive_label=positive_label,
        negative_label=negative_label,
    )


def _vifs(X: np.ndarray) -> np.ndarray:
    n, p = X.shape
    if n <= p + 1:
        return np.full(p, np.inf)
    out = np.empty(p)
    for j in range(p):
        tol = 1.0 - auxiliary_r2(X, j)
        out[j] = np.inf if tol < COLLINEAR_TOL else 1.0 / tol
    return out


def reduce_variables(design: DesignMatrix, vif_threshold: float = 10.0) -> DesignMatrix:
    """Drop constant columns, exact duplicates, then the max-VIF column until all VIF <= threshold.

    Duplicates keep the earlier column; VIF ties remove the later column.
    """
    X = design.X
    p = X.shape[1]
    const = [j for j in range(p) if np.ptp(X[:, j]) == 0]
    keep = [j for j in range(p) if j not in const]
    d = design.drop(keep, "zero_variance", const)

    X = d.X
    keep, dup = [], []
    for j in range(X.shape[1]):
        cj = X[:, j] - X[:, j].mean()
        twin = False
        for i in keep:
            ci = X[:, i] - X[:, i].mean()
            r = abs(ci @ cj) / np.sqrt((ci @ ci) * (cj @ cj))
            if r >= 1.0 - 1e-12:
                twin = True
                break
        (dup if twin else keep).append(j)
    d = d.drop(keep, "collinear", dup)

    while d.X.shape[1] >= 2:
        v = _vifs(d.X)
        top = v.max()
        if top <= vif_threshold:
            break
        j = int(np.flatnonzero(v == top)[-1])
        keep = [i for i in range(d.X.shape[1]) if i != j]
        d = d.drop(keep, "vif", [j])

    if d.X.shape[1] < 1:
        raise InputError("no predictor survives variable reduction")
    return d


@dataclass
class LogisticFit:
    item_ids: list
    coef: dict
    se: dict
    p_wald: dict
    intercept: tuple
    mcfadden_r2: float
    lr_test_p: float
    converged: bool
    iterations: int
    loglik: float
    null_loglik: float
    gradient_norm: float
    deviance_path: list = field(default_factory=list)
    ridge: float = 0.0
    n: int = 0

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.intercept[0], *(self.coef[i] for i in self.item_ids)])


def log_likelihood(beta, A, y) -> float:
    eta = A @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def score_vector(beta, A, y) -> np.ndarray:
    mu = 1.0 / (1.0 + np.exp(-(A @ beta)))
    return A.T @ (y - mu)


def fit_logistic(design: DesignMatrix, max_iter: int = 100, tol: float = 1e-8,
                 ridge: float = 0.0) -> LogisticFit:
    """Maximum-likelihood logistic fit with intercept by Newton steps with step halving.

    ``ridge`` adds ``ridge/2 * ||beta||^2`` (intercept unpenalized); with
    ``ridge == 0`` diverging coefficients raise :class:`SeparationError`.
    """
    X = np.asarray(design.X, dtype=float)
    y = np.asarray(design.target, dtype=float)
    n, p = X.shape
    if n <= p + 1:
        raise InputError(f"need more rows than parameters, got {n} rows for {p + 1} parameters")
    ybar = y.mean()
    if ybar in (0.0, 1.0):
        raise DegenerateInputError("target has a single class")
    A = np.column_stack([np.ones(n), X])
    pen = np.full(p + 1, ridge)
    pen[0] = 0.0

    def objective(b):
        return log_likelihood(b, A, y) - 0.5 * float(pen @ (b * b))

    beta = np.zeros(p + 1)
    beta[0] = np.log(ybar / (1 - ybar))
    obj = objective(beta)
    path = [-2.0 * log_likelihood(beta, A, y)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = 1.0 / (1.0 + np.exp(-(A @ beta)))
        g = A.T @ (y - mu) - pen * beta
        H = (A * (mu * (1 - mu))[:, None]).T @ A + np.diag(pen)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            raise SingularMatrixError("information matrix is singular") from None
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            new = objective(cand)
            if new >= obj - 1e-12 * max(1.0, abs(obj)):
                break
            t *= 0.5
        else:
            break
        beta, obj = cand, new
        path.append(-2.0 * log_likelihood(beta, A, y))
        if ridge == 0.0 and np.any(np.abs(beta[1:]) > SEPARATION_BOUND):
            cols = [design.item_ids[j] for j in np.flatnonzero(np.abs(beta[1:]) > SEPARATION_BOUND)]
            raise SeparationError(f"coefficients diverge (separation) for {cols}", columns=cols)
        if np.max(np.abs(t * step)) < tol:
            converged = True
            break

    mu = 1.0 / (1.0 + np.exp(-(A @ beta)))
    grad = A.T @ (y - mu) - pen * beta
    gnorm = float(np.linalg.norm(grad))
    if not converged and ridge == 0.0:
        raise SeparationError(
            f"no convergence after {max_iter} iterations; likely quasi-complete separation",
            columns=list(design.item_ids),
        )
    if not converged:
        raise NumericalError(f"penalized fit did not converge after {max_iter} iterations")
    H = (A * (mu * (1 - mu))[:, None]).T @ A + np.diag(pen)
    if np.linalg.cond(H) > 1e14:
        raise SingularMatrixError("information matrix is numerically singular")
    cov = np.linalg.inv(H)
    se = np.sqrt(np.diag(cov))
    z = beta / se
    pw = 2.0 * stats.norm.sf(np.abs(z))

    ll = log_likelihood(beta, A, y)
    ll0 = n * (ybar * np.log(ybar) + (1 - ybar) * np.log(1 - ybar))
    if p == 0:
        r2, lr_p = 0.0, 1.0
    else:
        r2 = max(0.0, 1.0 - ll / ll0)
        lr_p = float(stats.chi2.sf(max(0.0, 2.0 * (ll - ll0)), p))
    ids = list(design.item_ids)
    return LogisticFit(
        item_ids=ids,
        coef=dict(zip(ids, beta[1:].tolist())),
        se=dict(zip(ids, se[1:].tolist())),
        p_wald=dict(zip(ids, pw[1:].tolist())),
        intercept=(float(beta[0]), float(se[0]), float(pw[0])),
        mcfadden_r2=float(r2),
        lr_test_p=lr_p,
        converged=converged,
        iterations=it,
        loglik=ll,
        null_loglik=float(ll0),
        gradient_norm=gnorm,
        deviance_path=path,
        ridge=ridge,
        n=n,
    )


def fit_with_fallback(design: DesignMatrix, ridge_fallback: bool = False, **kw) -> LogisticFit:
    """Unpenalized fit; on separation, refit with a small ridge if allowed."""
    try:
        return fit_logistic(design, **kw)
    except SeparationError:
        if not ridge_fallback:
            raise
        kw = dict(kw)
        kw["max_iter"] = max(kw.get("max_iter", 100), 500)
        return fit_logistic(design, ridge=RIDGE_FALLBACK, **kw)


def tier(p: float) -> str:
    for bound, mark in TIERS:
        if p < bound:
            return mark
    return ""


@dataclass(frozen=True)
class TierRow:
    item_id: str
    topic: str
    coef: float
    se: float
    p: float
    tier: str


def significance_tiers(fit: LogisticFit, topics) -> list[TierRow]:
    """Annotate every fitted item with its tier and manifest topic.

    ``topics`` maps item_id to topic (a list of ``(item_id, topic)`` pairs
    also works).
    """
    if not isinstance(topics, Mapping):
        topics = dict(topics)
    rows = []
    for i in fit.item_ids:
        if i not in topics:
            raise ManifestMismatchError(f"item {i!r} missing from manifest")
        rows.append(TierRow(i, topics[i], fit.coef[i], fit.se[i], fit.p_wald[i], tier(fit.p_wald[i])))
    return rows


@dataclass(frozen=True)
class CommonFactor:
    topic: str
    items: dict  # cohort -> tuple of (item_id, coef, p)

    def signs(self) -> dict:
        return {c: tuple(int(np.sign(coef)) for _, coef, _ in v) for c, v in self.items.items()}


@dataclass
class FactorReport:
    tiers: dict
    common_factors: list
    alpha: float = 0.10

    @property
    def topics(self) -> list:
        return [f.topic for f in self.common_factors]


def extract_common_factors(reports: Mapping[str, Sequence[TierRow]], alpha: float = 0.10) -> FactorReport:
    """Topics with an item at p < alpha in every cohort, matched by exact topic text."""
    if len(reports) < 2:
        raise InputError("common factors need at least two cohorts")
    sig = {
        c: {}
        for c in reports
    }
    for c, rows in reports.items():
        for r in rows:
            if r.p < alpha:
                sig[c].setdefault(r.topic, []).append((r.item_id, r.coef, r.p))
    cohorts = list(reports)
    first = cohorts[0]
    common = []
    for topic in sig[first]:
        if all(topic in sig[c] for c in cohorts[1:]):
            common.append(CommonFactor(topic, {c: tuple(sig[c][topic]) for c in cohorts}))
    return FactorReport(tiers={c: list(v) for c, v in reports.items()}, common_factors=common, alpha=alpha)


def regression_csv(rows: Sequence[TierRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["item_id", "topic", "coef", "se", "p", "tier"])
    for r in rows:
        w.writerow([r.item_id, r.topic, f"{r.coef:.6f}", f"{r.se:.6f}", f"{r.p:.6f}", r.tier])
    return buf.getvalue()


def fit_summary(fit: LogisticFit, design: DesignMatrix) -> dict:
    return {
        "n": fit.n,
        "n_positive": int(design.target.sum()),
        "intercept": {"coef": round(fit.intercept[0], 6), "se": round(fit.intercept[1], 6),
                      "p": round(fit.intercept[2], 6)},
        "mcfadden_r2": round(fit.mcfadden_r2, 6),
        "lr_test_p": round(fit.lr_test_p, 6),
        "iterations": fit.iterations,
        "ridge_penalty": fit.ridge,
        "removed": [{"item_id": i, "reason": r} for i, r in design.removal_log],
    }


def factor_report_json(report: FactorReport) -> dict:
    return {
        "alpha": report.alpha,
        "tiers": {
            c: [{"item_id": r.item_id, "topic": r.topic, "coef": round(r.coef, 6),
                 "p": round(r.p, 6), "tier": r.tier} for r in rows if r.tier]
            for c, rows in report.tiers.items()
        },
        "common_factors": [
            {"topic": f.topic,
             "items": {c: [{"item_id": i, "coef": round(b, 6), "p": round(p, 6)} for i, b, p in v]
                       for c, v in f.items.items()}}
            for f in report.common_factors
        ],
    }

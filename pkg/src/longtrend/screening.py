"""Coherence screening of a chronological test chain.

A test whose evaluation criteria differ from the rest of the chain shows up
as depressed correlations with every other test, while the correlation that
skips over it stays high. Such tests are removed one at a time until every
pair of consecutive survivors correlates at ``theta_low`` or above.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data_model import ScorePanel, TestKey
from .errors import DegenerateInputError, InputError, InternalConsistencyError, ScreeningError
from .stats_core import CorrResult, correlation_p_value, pearson, spearman

# Scores closer than this are treated as tied.
TIE_TOL = 1e-12


@dataclass(frozen=True)
class ScreeningPolicy:
    theta_low: float = 0.70
    min_chain: int = 3
    score_kind: str = "correct_ratio"
    method: str = "pearson"

    def __post_init__(self):
        if not 0.0 < self.theta_low < 1.0:
            raise ValueError("theta_low must lie in (0, 1)")
        if self.min_chain < 2:
            raise ValueError("min_chain must be at least 2")
        if self.score_kind not in ("correct_ratio", "total_points"):
            raise ValueError(f"unknown score_kind {self.score_kind!r}")
        if self.method not in ("pearson", "spearman"):
            raise ValueError(f"unknown correlation method {self.method!r}")


@dataclass(frozen=True)
class TestCorrelationMatrix:
    """Symmetric correlation matrix over chronologically ordered tests.

    ``p`` is NaN when the matrix was built from reported coefficients
    without a sample size.
    """

    __test__ = False

    tests: tuple
    r: np.ndarray
    p: np.ndarray
    n: int | None = None

    def __post_init__(self):
        m = len(self.tests)
        if self.r.shape != (m, m) or self.p.shape != (m, m):
            raise InputError("correlation matrix shape does not match the test list")
        if not np.allclose(self.r, self.r.T, atol=1e-12, rtol=0, equal_nan=True):
            raise InputError("correlation matrix must be symmetric")
        orders = [t.order_index for t in self.tests]
        if orders != sorted(orders):
            raise InputError("tests must be in chronological order")

    @classmethod
    def from_upper(cls, tests: Sequence[TestKey], upper: Sequence[float], n: int | None = None):
        """Build from the row-major upper triangle, as printed in correlation tables."""
        m = len(tests)
        if len(upper) != m * (m - 1) // 2:
            raise InputError(f"expected {m * (m - 1) // 2} coefficients, got {len(upper)}")
        r = np.eye(m)
        p = np.full((m, m), np.nan)
        it = iter(upper)
        for i in range(m):
            for j in range(i + 1, m):
                r[i, j] = r[j, i] = float(next(it))
                if n is not None:
                    p[i, j] = p[j, i] = correlation_p_value(r[i, j], n)
        return cls(tuple(tests), r, p, n)

    def index(self, test: TestKey) -> int:
        return self.tests.index(test)

    def result(self, a: TestKey, b: TestKey) -> CorrResult:
        i, j = self.index(a), self.index(b)
        return CorrResult(r=float(self.r[i, j]), n=self.n or 0, p_two_sided=float(self.p[i, j]))


@dataclass(frozen=True)
class Exclusion:
    test: TestKey
    reason: str
    offending_r: tuple


@dataclass(frozen=True)
class ScreeningOutcome:
    retained: tuple
    excluded: tuple = ()
    final_consecutive_r: tuple = ()
    theta_low: float = 0.70


def correlation_matrix(panel: ScorePanel, policy: ScreeningPolicy = ScreeningPolicy()) -> TestCorrelationMatrix:
    """Pairwise correlations of per-student aggregate scores over the panel's tests."""
    if len(panel.students) < 3:
        raise InputError("correlation screening needs at least three students")
    corr = pearson if policy.method == "pearson" else spearman
    cols = [panel.scores(t, policy.score_kind) for t in panel.tests]
    for t, c in zip(panel.tests, cols):
        if np.ptp(c) == 0:
            raise DegenerateInputError(f"test {t.test_id!r} has zero variance across students")
    m = len(cols)
    r = np.eye(m)
    p = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            res = corr(cols[i], cols[j])
            r[i, j] = r[j, i] = res.r
            p[i, j] = p[j, i] = res.p_two_sided
    return TestCorrelationMatrix(panel.tests, r, p, len(panel.students))


def _consecutive(r: np.ndarray, keep: list[int]) -> list[float]:
    return [float(r[a, b]) for a, b in zip(keep, keep[1:])]


def screen_tests(matrix: TestCorrelationMatrix, policy: ScreeningPolicy = ScreeningPolicy()) -> ScreeningOutcome:
    """Drop incoherent tests until all consecutive survivors have r >= theta_low.

    Each round scores every surviving test by its mean correlation with the
    other survivors and removes the lowest (the later one on a tie). The
    scores never look at ``theta_low``, so the removal order is fixed by the
    matrix and a stricter threshold can only remove more.
    """
    tests = matrix.tests
    r = matrix.r
    if len(tests) < policy.min_chain:
        raise ScreeningError(f"chain has {len(tests)} tests, fewer than min_chain={policy.min_chain}")
    keep = list(range(len(tests)))
    excluded: list[Exclusion] = []

    while min(_consecutive(r, keep)) < policy.theta_low:
        if len(keep) <= policy.min_chain:
            raise ScreeningError(
                f"screening would leave fewer than {policy.min_chain} tests "
                f"(theta_low={policy.theta_low})",
                removal_log=excluded,
            )
        scores = [float(np.mean([r[t, u] for u in keep if u != t])) for t in keep]
        low = min(scores)
        pos = max(i for i, s in enumerate(scores) if s - low <= TIE_TOL)
        t = keep[pos]
        neighbours = [keep[q] for q in (pos - 1, pos + 1) if 0 <= q < len(keep)]
        adjacent = tuple(float(r[t, u]) for u in neighbours)
        low_pairs = ", ".join(
            f"{tests[u].test_id} {r[t, u]:.2f}" for u in neighbours if r[t, u] < policy.theta_low
        )
        reason = f"mean r with retained tests {low:.3f}"
        if low_pairs:
            reason += f"; consecutive r below {policy.theta_low:.2f}: {low_pairs}"
        excluded.append(Exclusion(tests[t], reason, adjacent))
        keep.pop(pos)

    return ScreeningOutcome(
        retained=tuple(tests[i] for i in keep),
        excluded=tuple(excluded),
        final_consecutive_r=tuple(_consecutive(r, keep)),
        theta_low=policy.theta_low,
    )


def skip_screening(matrix: TestCorrelationMatrix, policy: ScreeningPolicy = ScreeningPolicy()) -> ScreeningOutcome:
    """Outcome that keeps the whole chain, for the unscreened ablation."""
    keep = list(range(len(matrix.tests)))
    return ScreeningOutcome(
        retained=matrix.tests,
        final_consecutive_r=tuple(_consecutive(matrix.r, keep)),
        theta_low=policy.theta_low,
    )


@dataclass
class ChainReport:
    passed: bool
    lines: list = field(default_factory=list)

    def __str__(self):
        return "\n".join(self.lines)


def validate_chain(outcome: ScreeningOutcome, policy: ScreeningPolicy = ScreeningPolicy()) -> ChainReport:
    """Re-check the retained chain and render an audit of the exclusions."""
    orders = [t.order_index for t in outcome.retained]
    if orders != sorted(orders):
        raise InternalConsistencyError("retained tests are out of chronological order")
    if len(outcome.final_consecutive_r) != max(0, len(outcome.retained) - 1):
        raise InternalConsistencyError("consecutive correlations do not match the retained chain")
    bad = [r for r in outcome.final_consecutive_r if r < policy.theta_low]
    if bad:
        raise InternalConsistencyError(
            f"retained chain has consecutive r below {policy.theta_low}: {bad}"
        )
    lines = [f"excluded {e.test.test_id}: {e.reason}" for e in outcome.excluded]
    chain = " -> ".join(t.test_id for t in outcome.retained)
    rs = ", ".join(f"{r:.2f}" for r in outcome.final_consecutive_r)
    lines.append(f"retained {chain} (consecutive r: {rs})")
    return ChainReport(passed=True, lines=lines)


def _test_json(t: TestKey) -> dict:
    return {
        "test_id": t.test_id, "organization": t.organization, "subject": t.subject,
        "grade": t.grade, "variant": t.variant, "year": t.year, "order_index": t.order_index,
    }


def screening_report(matrix: TestCorrelationMatrix, outcome: ScreeningOutcome,
                     policy: ScreeningPolicy, skipped: bool = False) -> dict:
    return {
        "policy": {"theta_low": policy.theta_low, "min_chain": policy.min_chain,
                   "score_kind": policy.score_kind, "method": policy.method},
        "skipped": skipped,
        "n_students": matrix.n,
        "tests": [_test_json(t) for t in matrix.tests],
        "retained": [t.test_id for t in outcome.retained],
        "excluded": [
            {"test_id": e.test.test_id, "reason": e.reason,
             "offending_r": [round(v, 4) for v in e.offending_r]}
            for e in outcome.excluded
        ],
        "final_consecutive_r": [round(v, 4) for v in outcome.final_consecutive_r],
        "r": [[round(float(v), 4) for v in row] for row in matrix.r],
        "p": [[None if np.isnan(v) else round(float(v), 4) for v in row] for row in matrix.p],
    }


def write_screening(out_dir, matrix: TestCorrelationMatrix, outcome: ScreeningOutcome,
                    policy: ScreeningPolicy, skipped: bool = False) -> None:
    """Write ``screening_report.json``, ``correlations.csv`` and ``correlations_p.csv``."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = screening_report(matrix, outcome, policy, skipped)
    (out / "screening_report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    ids = [t.test_id for t in matrix.tests]
    for name, values in (("correlations.csv", matrix.r), ("correlations_p.csv", matrix.p)):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test_id", *ids])
        for tid, row in zip(ids, values):
            w.writerow([tid, *("" if np.isnan(v) else f"{v:.4f}" for v in row)])
        (out / name).write_text(buf.getvalue(), encoding="utf-8")

"""Shape-and-value trend vectors, k-means, archetype labels, cohort agreement.

A trend vector for ``m`` retained tests is the ``m`` levels followed by all
``m(m-1)/2`` later-minus-earlier differences, later index descending and,
within it, earlier index ascending. For three tests this is::

    (x1, x2, x3, x3 - x1, x3 - x2, x2 - x1)
"""

from __future__ import annotations

import csv
import enum
import io
from collections import Counter
from dataclasses import dataclass, field
from math import comb
from typing import Mapping, Sequence

import numpy as np

from .data_model import ScorePanel, TestKey
from .errors import InputError, InternalConsistencyError
from .stats_core import deviation_transform

LEVEL_MIDPOINT = 50.0


class Archetype(str, enum.Enum):
    STAY_HIGH_STABLY = "stay_high_stably"
    STAY_LOW_STABLY = "stay_low_stably"
    INCREASE_FROM_LOW = "increase_from_low"
    DECREASE_FROM_HIGH = "decrease_from_high"

    def __str__(self):
        return self.value


def other_label(index: int) -> str:
    return f"other({index})"


def is_archetype(label: str) -> bool:
    return label in {a.value for a in Archetype}


def diff_pairs(m: int) -> list[tuple[int, int]]:
    """``(later, earlier)`` index pairs in trend-vector order."""
    return [(later, earlier) for later in range(m - 1, 0, -1) for earlier in range(later)]


@dataclass(frozen=True)
class TrendVector:
    student_id: str
    levels: np.ndarray
    diffs: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.levels, self.diffs])


def trend_matrix(levels: np.ndarray) -> np.ndarray:
    """Rows of levels -> rows of full trend vectors."""
    levels = np.asarray(levels, dtype=float)
    m = levels.shape[1]
    diffs = [levels[:, a] - levels[:, b] for a, b in diff_pairs(m)]
    return np.column_stack([levels, *diffs]) if diffs else levels.copy()


def level_matrix(panel: ScorePanel, retained: Sequence[TestKey], score_kind: str = "correct_ratio",
                 mode: str = "deviation") -> np.ndarray:
    """``(n_students, m)`` levels: deviation scores or raw aggregates."""
    if mode not in ("deviation", "ratio"):
        raise ValueError(f"unknown level mode {mode!r}")
    cols = []
    for t in retained:
        raw = panel.scores(t, score_kind)
        cols.append(deviation_transform(raw)[0] if mode == "deviation" else np.asarray(raw, dtype=float))
    return np.column_stack(cols)


def build_trend_vectors(panel: ScorePanel, retained: Sequence[TestKey], score_kind: str = "correct_ratio",
                        mode: str = "deviation") -> list[TrendVector]:
    retained = list(retained)
    if len(retained) < 2:
        raise InputError("trend vectors need at least two retained tests")
    missing = [t.test_id for t in retained if t not in panel.tests]
    if missing:
        raise InputError(f"retained tests not in panel: {missing}")
    retained.sort(key=lambda t: t.order_index)
    full = trend_matrix(level_matrix(panel, retained, score_kind, mode))
    m = len(retained)
    return [TrendVector(s, row[:m].copy(), row[m:].copy()) for s, row in zip(panel.students, full)]


@dataclass
class Clustering:
    k: int
    centroids: np.ndarray
    assignment: dict
    inertia: float
    seed: int
    iterations: int
    labels: dict = field(default_factory=dict)
    inertia_path: list = field(default_factory=list)

    @property
    def student_ids(self) -> list:
        return list(self.assignment)

    def label_of(self, student_id: str) -> str:
        return self.labels[self.assignment[student_id]]

    def members(self, label: str) -> list:
        idx = {c for c, lab in self.labels.items() if lab == label}
        return [s for s, c in self.assignment.items() if c in idx]


def _as_matrix(vectors) -> tuple[list, np.ndarray]:
    if isinstance(vectors, np.ndarray):
        X = np.asarray(vectors, dtype=float)
        ids = [str(i) for i in range(X.shape[0])]
    else:
        vectors = list(vectors)
        if vectors and isinstance(vectors[0], TrendVector):
            ids = [v.student_id for v in vectors]
            X = np.array([v.vector for v in vectors], dtype=float)
        else:
            X = np.asarray(vectors, dtype=float)
            ids = [str(i) for i in range(X.shape[0])]
    if X.ndim != 2:
        raise InputError("vectors must share one dimension")
    if np.isnan(X).any():
        raise InputError("vectors contain NaN")
    return ids, X


def _sq_dist(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _repair_empty(X, labels, centroids, k):
    """Give each empty cluster the point farthest from its current centroid."""
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        d = ((X - centroids[labels]) ** 2).sum(axis=1)
        donors = counts[labels] > 1
        if not donors.any():
            break
        d = np.where(donors, d, -1.0)
        far = int(np.argmax(d))
        counts[labels[far]] -= 1
        labels[far] = j
        counts[j] = 1
        centroids[j] = X[far]
    return labels


def _inertia(X, labels, centroids) -> float:
    return float(((X - centroids[labels]) ** 2).sum())


def kmeans(vectors, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6) -> Clustering:
    """Lloyd iterations from a seeded k-means++ start.

    Stops when no centroid moves by ``tol`` or more (Euclidean) or after
    ``max_iter`` rounds. Inertia is checked to be non-increasing each round.
    """
    ids, X = _as_matrix(vectors)
    n = X.shape[0]
    if k < 1:
        raise InputError("k must be at least 1")
    if k > n:
        raise InputError(f"k={k} exceeds the number of vectors ({n})")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plus_plus(X, k, rng)
    prev = np.inf
    path = []
    it = 0
    for it in range(1, max_iter + 1):
        labels = np.argmin(_sq_dist(X, centroids), axis=1)
        labels = _repair_empty(X, labels, centroids, k)
        new = np.array([X[labels == j].mean(axis=0) for j in range(k)])
        inertia = _inertia(X, labels, new)
        if inertia > prev * (1 + 1e-12) + 1e-12:
            raise InternalConsistencyError(f"k-means inertia rose from {prev} to {inertia}")
        path.append(inertia)
        prev = inertia
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break
    # Final assignment consistent with the returned centroids.
    final = np.argmin(_sq_dist(X, centroids), axis=1)
    final = _repair_empty(X, final, centroids, k)
    centroids = np.array([X[final == j].mean(axis=0) for j in range(k)])
    inertia = _inertia(X, final, centroids)
    return Clustering(
        k=k,
        centroids=centroids,
        assignment={s: int(c) for s, c in zip(ids, final)},
        inertia=inertia,
        seed=seed,
        iterations=it,
        labels={j: other_label(j) for j in range(k)},
        inertia_path=path,
    )


def kmeans_restarts(vectors, k: int, seed: int = 0, restarts: int = 10, **kw) -> Clustering:
    """Best of ``restarts`` runs seeded ``seed, seed + 1, ...``; ties keep the lowest seed."""
    best = None
    for s in range(seed, seed + max(1, restarts)):
        c = kmeans(vectors, k, seed=s, **kw)
        if best is None or c.inertia < best.inertia:
            best = c
    return best


def label_clusters(clustering: Clustering, retained_m: int, scale: str = "deviation") -> dict:
    """Name clusters by where their centroid trajectory starts and ends.

    Start and end levels are compared with 50 (ties count as high). Only
    deviation-score levels can be labelled; any other scale gets
    ``other(index)``.
    """
    if scale != "deviation":
        return {j: other_label(j) for j in range(clustering.k)}
    labels = {}
    for j, c in enumerate(clustering.centroids):
        start, end = c[0], c[retained_m - 1]
        if start >= LEVEL_MIDPOINT:
            lab = Archetype.STAY_HIGH_STABLY if end >= LEVEL_MIDPOINT else Archetype.DECREASE_FROM_HIGH
        else:
            lab = Archetype.INCREASE_FROM_LOW if end >= LEVEL_MIDPOINT else Archetype.STAY_LOW_STABLY
        labels[j] = lab.value
    return labels


@dataclass
class ConsistencyReport:
    verdict: str
    label_multisets: dict
    pairing: list

    @property
    def consistent(self) -> bool:
        return self.verdict == "consistent"

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "label_multisets": {k: sorted(v) for k, v in self.label_multisets.items()},
            "pairing": [
                {"label": lab, "a": a, "b": b, "distance": round(d, 6)} for lab, a, b, d in self.pairing
            ],
        }


def match_clusterings(a: Clustering, b: Clustering, names: tuple = ("a", "b")) -> ConsistencyReport:
    """Compare two cohorts' clusterings by their archetype labels.

    Consistent means the same multiset of labels and no uninterpretable
    ``other`` cluster. Clusters sharing a label are paired greedily by
    centroid distance.
    """
    if a.centroids.shape[1] != b.centroids.shape[1]:
        raise InputError("clusterings have different vector dimensions")
    if a.k != b.k:
        raise InputError(f"clusterings have different k ({a.k} vs {b.k})")
    la = [a.labels[j] for j in range(a.k)]
    lb = [b.labels[j] for j in range(b.k)]
    same = Counter(la) == Counter(lb) and all(is_archetype(x) for x in la)
    cands = []
    for i, x in enumerate(la):
        for j, y in enumerate(lb):
            if x == y:
                d = float(np.linalg.norm(a.centroids[i] - b.centroids[j]))
                cands.append((d, i, j, x))
    cands.sort()
    used_a, used_b, pairing = set(), set(), []
    for d, i, j, lab in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairing.append((lab, i, j, d))
    pairing.sort(key=lambda p: p[1])
    return ConsistencyReport(
        verdict="consistent" if same else "inconsistent",
        label_multisets={names[0]: la, names[1]: lb},
        pairing=pairing,
    )


def adjusted_rand_index(assignment_a: Mapping, assignment_b: Mapping) -> float:
    """Chance-corrected pair agreement between two partitions of the same students."""
    if set(assignment_a) != set(assignment_b):
        raise InputError("assignments cover different students")
    keys = list(assignment_a)
    n = len(keys)
    if n < 2:
        return 1.0
    table = Counter((assignment_a[s], assignment_b[s]) for s in keys)
    rows = Counter(assignment_a[s] for s in keys)
    cols = Counter(assignment_b[s] for s in keys)
    index = sum(comb(v, 2) for v in table.values())
    sum_a = sum(comb(v, 2) for v in rows.values())
    sum_b = sum(comb(v, 2) for v in cols.values())
    expected = sum_a * sum_b / comb(n, 2)
    best = 0.5 * (sum_a + sum_b)
    if best == expected:
        return 1.0
    return float((index - expected) / (best - expected))


def clusters_csv(clustering: Clustering) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["student_id", "cluster_index", "label"])
    for s, c in clustering.assignment.items():
        w.writerow([s, c, clustering.labels[c]])
    return buf.getvalue()


def centroids_csv(clustering: Clustering, retained_ids: Sequence[str]) -> str:
    m = len(retained_ids)
    cols = [f"level_{t}" for t in retained_ids]
    cols += [f"diff_{retained_ids[a]}_minus_{retained_ids[b]}" for a, b in diff_pairs(m)]
    sizes = Counter(clustering.assignment.values())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cluster_index", "label", "n_students", *cols])
    for j, c in enumerate(clustering.centroids):
        w.writerow([j, clustering.labels[j], sizes.get(j, 0), *(repr(float(v)) for v in c)])
    return buf.getvalue()


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def trajectories_svg(clustering: Clustering, retained_ids: Sequence[str], scale: str = "deviation") -> str:
    """Polyline chart of centroid levels across the retained tests."""
    m = len(retained_ids)
    levels = clustering.centroids[:, :m]
    width, height, pad = 640, 400, 60
    lo, hi = float(levels.min()), float(levels.max())
    if scale == "deviation":
        lo, hi = min(lo, 30.0), max(hi, 70.0)
    span = (hi - lo) or 1.0
    lo -= 0.05 * span
    hi += 0.05 * span

    def xy(i, v):
        x = pad + (width - 2 * pad) * (i / max(1, m - 1))
        y = height - pad - (height - 2 * pad) * (v - lo) / (hi - lo)
        return f"{x:.1f},{y:.1f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    if scale == "deviation" and lo < LEVEL_MIDPOINT < hi:
        a, b = xy(0, LEVEL_MIDPOINT), xy(m - 1, LEVEL_MIDPOINT)
        x1, y1 = a.split(",")
        x2, y2 = b.split(",")
        out.append(f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="#aaaaaa" stroke-dasharray="4 4"/>')
    for i, tid in enumerate(retained_ids):
        x = xy(i, lo).split(",")[0]
        out.append(f'<text x="{x}" y="{height - pad + 20}" font-size="12" text-anchor="middle">{tid}</text>')
    ylabel = "deviation score" if scale == "deviation" else "correct ratio"
    out.append(f'<text x="15" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 15 {height / 2:.0f})" '
               f'text-anchor="middle">{ylabel}</text>')
    for j, row in enumerate(levels):
        color = _COLORS[j % len(_COLORS)]
        pts = " ".join(xy(i, v) for i, v in enumerate(row))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - pad + 4}" y="{xy(m - 1, row[-1]).split(",")[1]}" font-size="11" '
                   f'fill="{color}">{j}: {clustering.labels[j]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

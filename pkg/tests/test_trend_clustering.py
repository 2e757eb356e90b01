import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from longtrend.errors import InputError
from longtrend.trend_clustering import (
    Archetype,
    Clustering,
    adjusted_rand_index,
    build_trend_vectors,
    centroids_csv,
    clusters_csv,
    diff_pairs,
    kmeans,
    kmeans_restarts,
    label_clusters,
    match_clusterings,
    trajectories_svg,
    trend_matrix,
)

from reference_data import CENTROIDS


def test_three_test_layout():
    assert_allclose(trend_matrix([[50, 55, 60]])[0], [50, 55, 60, 10, 5, 5])
    x = np.random.default_rng(0).normal(size=(20, 3))
    v = trend_matrix(x)
    assert_allclose(v[:, 3:], np.column_stack([x[:, 2] - x[:, 0], x[:, 2] - x[:, 1], x[:, 1] - x[:, 0]]),
                    atol=1e-12)


def test_dimensions_and_constant_levels():
    assert trend_matrix(np.zeros((1, 5))).shape == (1, 15)
    assert len(diff_pairs(5)) == 10
    assert_allclose(trend_matrix([[50, 50, 50]])[0, 3:], 0)


def test_build_trend_vectors(small_panel):
    tv = build_trend_vectors(small_panel, small_panel.tests[:3])
    assert len(tv) == len(small_panel.students)
    levels = np.array([v.levels for v in tv])
    assert_allclose(levels.mean(axis=0), 50, atol=1e-9)
    assert_allclose(levels.std(axis=0), 10, atol=1e-9)
    ratio = build_trend_vectors(small_panel, small_panel.tests, mode="ratio")
    assert ratio[0].vector.shape == (4 + 6,)
    assert_allclose(ratio[0].levels, small_panel.correct_ratio[0])
    with pytest.raises(InputError):
        build_trend_vectors(small_panel, small_panel.tests[:1])


def test_kmeans_single_cluster():
    X = np.random.default_rng(1).normal(size=(30, 4))
    c = kmeans(X, 1, seed=3)
    assert_allclose(c.centroids[0], X.mean(axis=0))
    assert set(c.assignment.values()) == {0}


def test_kmeans_identical_points():
    c = kmeans(np.ones((6, 3)), 2, seed=0)
    assert c.inertia == 0.0
    assert sorted(set(c.assignment.values())) == [0, 1]


def test_kmeans_errors():
    with pytest.raises(InputError):
        kmeans(np.zeros((2, 2)), 3)
    X = np.zeros((4, 2))
    X[0, 0] = np.nan
    with pytest.raises(InputError):
        kmeans(X, 2)


def brute_force_two_means(X):
    """Minimum-inertia 2-partition by exhaustive enumeration."""
    n = X.shape[0]
    best, best_lab = np.inf, None
    for bits in itertools.product([0, 1], repeat=n - 1):
        lab = np.array((0,) + bits)
        if lab.min() == lab.max():
            continue
        inertia = sum(((X[lab == j] - X[lab == j].mean(axis=0)) ** 2).sum() for j in (0, 1))
        if inertia < best:
            best, best_lab = inertia, lab
    return best, best_lab


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_matches_exhaustive_partition(seed):
    rng = np.random.default_rng(seed)
    n1 = int(rng.integers(3, 7))
    n2 = 12 - n1
    X = np.vstack([rng.normal(0, 1, size=(n1, 3)), rng.normal(40, 1, size=(n2, 3))])
    best, lab = brute_force_two_means(X)
    c = kmeans(X, 2, seed=seed)
    ours = np.array([c.assignment[str(i)] for i in range(12)])
    assert adjusted_rand_index(dict(enumerate(ours)), dict(enumerate(lab))) == 1.0
    assert c.inertia == pytest.approx(best, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 5))
def test_kmeans_inertia_and_determinism(seed, k):
    X = np.random.default_rng(seed).normal(size=(40, 6))
    a = kmeans(X, k, seed=seed)
    b = kmeans(X, k, seed=seed)
    assert a.assignment == b.assignment
    assert all(x >= y - 1e-9 for x, y in zip(a.inertia_path, a.inertia_path[1:]))
    recomputed = sum(((X[i] - a.centroids[c]) ** 2).sum() for i, c in enumerate(a.assignment.values()))
    assert a.inertia == pytest.approx(recomputed)


def test_diff_permutation_invariance():
    levels = np.random.default_rng(5).normal(50, 10, size=(60, 4))
    V = trend_matrix(levels)
    perm = np.r_[np.arange(4), 4 + np.random.default_rng(1).permutation(6)]
    a = kmeans(V, 3, seed=2)
    b = kmeans(V[:, perm], 3, seed=2)
    assert a.assignment == b.assignment


def test_restarts_pick_lowest_inertia():
    X = np.random.default_rng(6).normal(size=(50, 3))
    best = kmeans_restarts(X, 4, seed=10, restarts=5)
    runs = [kmeans(X, 4, seed=s) for s in range(10, 15)]
    assert best.inertia == min(r.inertia for r in runs)
    first = next(r for r in runs if r.inertia == best.inertia)
    assert best.seed == first.seed


def _clustering_from_levels(levels):
    cents = trend_matrix(np.array(levels, dtype=float))
    k = len(levels)
    return Clustering(k=k, centroids=cents, assignment={}, inertia=0.0, seed=0, iterations=0)


@pytest.mark.parametrize("group", sorted(CENTROIDS))
def test_labels_from_reported_centroids(group):
    names = list(CENTROIDS[group])
    c = _clustering_from_levels([CENTROIDS[group][n] for n in names])
    assert [label_clusters(c, 3)[j] for j in range(4)] == names


def test_label_boundary_and_ratio_scale():
    c = _clustering_from_levels([(50, 49, 50)])
    assert label_clusters(c, 3) == {0: Archetype.STAY_HIGH_STABLY.value}
    assert label_clusters(c, 3, scale="ratio") == {0: "other(0)"}


def _labelled(levels, labels, assignment=None):
    c = _clustering_from_levels(levels)
    c.labels = dict(enumerate(labels))
    c.assignment = assignment or {}
    return c


def test_match_consistent_and_inconsistent():
    labs = [a.value for a in Archetype]
    lv = [CENTROIDS["group1"][n] for n in labs]
    a = _labelled(lv, labs)
    b = _labelled([CENTROIDS["group2"][n] for n in labs][::-1], labs[::-1])
    rep = match_clusterings(a, b)
    assert rep.consistent
    assert sorted(p[0] for p in rep.pairing) == sorted(labs)
    same = match_clusterings(a, a)
    assert all(p[3] == 0 for p in same.pairing)
    other = _labelled(lv, ["other(0)", "other(1)", "other(2)", "other(3)"])
    assert not match_clusterings(other, other).consistent
    wrong = _labelled(lv, [labs[0]] * 4)
    assert not match_clusterings(a, wrong).consistent
    with pytest.raises(InputError):
        match_clusterings(a, _labelled([(1, 2)] * 4, labs))


def test_ari_examples():
    a = {i: i % 3 for i in range(12)}
    assert adjusted_rand_index(a, a) == 1.0
    singles = {i: i for i in range(4)}
    one = {i: 0 for i in range(4)}
    assert adjusted_rand_index(singles, one) == pytest.approx(0.0)
    with pytest.raises(InputError):
        adjusted_rand_index({1: 0}, {2: 0})


def test_ari_against_sklearn():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(8)
    for _ in range(30):
        n = int(rng.integers(2, 60))
        a, b = rng.integers(0, 4, n), rng.integers(0, 3, n)
        ours = adjusted_rand_index(dict(enumerate(a)), dict(enumerate(b)))
        assert ours == pytest.approx(metrics.adjusted_rand_score(a, b), abs=1e-12)


def test_ari_random_null():
    rng = np.random.default_rng(9)
    vals = [adjusted_rand_index(dict(enumerate(rng.integers(0, 4, 500))),
                                dict(enumerate(rng.integers(0, 4, 500)))) for _ in range(20)]
    assert abs(np.mean(vals)) < 0.05


def test_report_writers(small_panel):
    tv = build_trend_vectors(small_panel, small_panel.tests[:3])
    c = kmeans_restarts(tv, 3, seed=0, restarts=2)
    c.labels = label_clusters(c, 3)
    ids = [t.test_id for t in small_panel.tests[:3]]
    rows = clusters_csv(c).splitlines()
    assert rows[0] == "student_id,cluster_index,label" and len(rows) == 41
    head = centroids_csv(c, ids).splitlines()[0].split(",")
    assert head[:4] == ["cluster_index", "label", "n_students", "level_T1"]
    assert head[-1] == "diff_T2_minus_T1" and len(head) == 3 + 6
    svg = trajectories_svg(c, ids)
    assert svg.startswith("<svg") and svg.count("<polyline") == 3

import numpy as np
import pytest
from numpy.testing import assert_allclose

from longtrend.data_model import ScorePanel, TestKey
from longtrend.errors import DegenerateInputError, InputError, ManifestMismatchError, SeparationError
from longtrend.factor_inference import (
    RIDGE_FALLBACK,
    DesignMatrix,
    TierRow,
    build_design,
    extract_common_factors,
    fit_logistic,
    fit_with_fallback,
    log_likelihood,
    reduce_variables,
    regression_csv,
    score_vector,
    significance_tiers,
    tier,
)
from longtrend.trend_clustering import Clustering

from oracles import central_difference, direct_vif, gradient_ascent_logistic
from reference_data import (
    CLUSTER_SIZES,
    COMMON_HIGH_VS_DECREASE,
    COMMON_INCREASE_VS_LOW,
    HIGH_VS_DECREASE,
    INCREASE_VS_LOW,
    TOPICS_2014,
    TOPICS_2015,
)


def design(X, y, ids=None):
    X = np.asarray(X, dtype=float)
    ids = ids or [f"i{j}" for j in range(X.shape[1])]
    return DesignMatrix(students=[str(i) for i in range(len(y))], target=np.asarray(y), X=X, item_ids=ids)


def baseline_panel(n, n_items=28, seed=0):
    rng = np.random.default_rng(seed)
    key = TestKey("NL5", "A", "national_language", 5, None, 2014, 0)
    items = {"NL5": list(TOPICS_2014.items())[:n_items]}
    resp = {"NL5": rng.integers(0, 2, size=(n, n_items))}
    return ScorePanel("g1", "national_language", [key], [f"s{i}" for i in range(n)], items, resp), key


def clustering_with_sizes(sizes):
    labels, assignment, start = {}, {}, 0
    for j, (lab, size) in enumerate(sizes.items()):
        labels[j] = lab
        for i in range(start, start + size):
            assignment[f"s{i}"] = j
        start += size
    k = len(labels)
    return Clustering(k=k, centroids=np.zeros((k, 6)), assignment=assignment, inertia=0.0, seed=0,
                      iterations=0, labels=labels)


def test_build_design_counts():
    sizes = CLUSTER_SIZES["group1"]
    panel, key = baseline_panel(sum(sizes.values()))
    d = build_design(panel, key, clustering_with_sizes(sizes), "stay_high_stably", "decrease_from_high")
    assert d.X.shape == (84, 28)
    assert int(d.target.sum()) == 39
    with pytest.raises(InputError):
        build_design(panel, key, clustering_with_sizes(sizes), "stay_high_stably", "stay_high_stably")


def test_build_design_small_cluster():
    panel, key = baseline_panel(12)
    c = clustering_with_sizes({"stay_high_stably": 1, "decrease_from_high": 11})
    with pytest.raises(InputError, match="fewer than two"):
        build_design(panel, key, c, "stay_high_stably", "decrease_from_high")


def test_reduce_zero_variance_and_duplicates():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, size=(50, 4)).astype(float)
    X = np.column_stack([X, np.ones(50), X[:, 1]])
    d = reduce_variables(design(X, rng.integers(0, 2, 50)))
    assert d.removal_log == [("i4", "zero_variance"), ("i5", "collinear")]
    assert d.item_ids == ["i0", "i1", "i2", "i3"]


def test_reduce_vif_drops_planted_column_first():
    rng = np.random.default_rng(1)
    x1, x3 = rng.normal(size=400), rng.normal(size=400)
    x2 = x1 + 0.5 * x3 + rng.normal(scale=0.25, size=400)
    d = reduce_variables(design(np.column_stack([x1, x2, x3]), rng.integers(0, 2, 400)))
    assert d.removal_log[0] == ("i1", "vif")
    assert np.all(direct_vif(d.X) <= 10) if d.X.shape[1] > 1 else True


def test_reduce_random_designs_end_below_threshold():
    rng = np.random.default_rng(2)
    for _ in range(20):
        base = rng.normal(size=(80, 3))
        X = np.column_stack([base, base @ rng.normal(size=(3, 4)) + rng.normal(scale=0.1, size=(80, 4))])
        d = reduce_variables(design(X, rng.integers(0, 2, 80)))
        assert len(d.removal_log) <= X.shape[1]
        if d.X.shape[1] > 1:
            assert direct_vif(d.X).max() <= 10


def test_intercept_only():
    y = np.array([1] * 3 + [0] * 7)
    fit = fit_logistic(design(np.empty((10, 0)), y))
    assert fit.intercept[0] == pytest.approx(np.log(3 / 7), abs=1e-8)
    assert fit.mcfadden_r2 == 0.0
    assert fit.lr_test_p == 1.0


def test_null_predictor():
    y = np.array([0, 1] * 20)
    x = np.array([0, 0, 1, 1] * 10)
    fit = fit_logistic(design(x[:, None], y))
    assert abs(fit.coef["i0"]) < 1e-8
    assert fit.p_wald["i0"] == pytest.approx(1.0, abs=1e-6)
    assert fit.mcfadden_r2 == pytest.approx(0.0, abs=1e-12)


def test_separation_detected_and_fallback():
    x = np.array([0] * 10 + [1] * 10, float)
    y = x.astype(int)
    with pytest.raises(SeparationError) as exc:
        fit_logistic(design(np.column_stack([x, np.random.default_rng(0).normal(size=20)]), y))
    assert "i0" in exc.value.columns
    fit = fit_with_fallback(design(x[:, None], y), ridge_fallback=True)
    assert fit.ridge == RIDGE_FALLBACK
    with pytest.raises(SeparationError):
        fit_with_fallback(design(x[:, None], y))


def test_single_class_target():
    with pytest.raises(DegenerateInputError):
        fit_logistic(design(np.random.default_rng(0).normal(size=(10, 1)), np.ones(10, int)))


def _random_design(rng):
    n = int(rng.integers(25, 61))
    p = int(rng.integers(1, 6))
    X = rng.normal(size=(n, p))
    beta = rng.normal(scale=0.7, size=p + 1)
    y = (rng.random(n) < 1 / (1 + np.exp(-(beta[0] + X @ beta[1:])))).astype(int)
    return X, y


def test_fit_matches_gradient_oracle():
    rng = np.random.default_rng(3)
    for _ in range(15):
        X, y = _random_design(rng)
        try:
            fit = fit_logistic(design(X, y))
        except SeparationError:
            continue
        ref = gradient_ascent_logistic(X, y)
        assert np.max(np.abs(fit.beta - ref)) < 1e-5
        assert fit.gradient_norm < 1e-6
        assert all(a >= b - 1e-9 for a, b in zip(fit.deviance_path, fit.deviance_path[1:]))


def test_statsmodels_agreement():
    sm = pytest.importorskip("statsmodels.api")
    rng = np.random.default_rng(4)
    X, y = _random_design(rng)
    fit = fit_logistic(design(X, y))
    ref = sm.Logit(y, sm.add_constant(X)).fit(disp=0)
    assert_allclose(fit.beta, ref.params, atol=1e-6)
    assert_allclose([fit.intercept[1], *fit.se.values()], ref.bse, rtol=1e-5)
    assert_allclose([fit.intercept[2], *fit.p_wald.values()], ref.pvalues, rtol=1e-5)
    assert fit.mcfadden_r2 == pytest.approx(ref.prsquared, rel=1e-6)
    assert fit.lr_test_p == pytest.approx(ref.llr_pvalue, rel=1e-5)


def test_finite_difference_gradient():
    rng = np.random.default_rng(5)
    X, y = _random_design(rng)
    A = np.column_stack([np.ones(len(y)), X])
    for _ in range(5):
        b = rng.normal(size=A.shape[1])
        fd = central_difference(lambda v: log_likelihood(v, A, y), b)
        assert_allclose(score_vector(b, A, y), fd, rtol=1e-4, atol=1e-6)


def test_row_permutation_and_label_swap():
    rng = np.random.default_rng(6)
    X, y = _random_design(rng)
    fit = fit_logistic(design(X, y))
    perm = rng.permutation(len(y))
    assert np.max(np.abs(fit_logistic(design(X[perm], y[perm])).beta - fit.beta)) < 1e-10
    swapped = fit_logistic(design(X, 1 - y))
    assert_allclose(swapped.beta, -fit.beta, atol=1e-8)


def test_tiers():
    assert tier(0.02) == "*"
    assert tier(0.005) == "**"
    assert tier(0.10) == ""
    assert tier(0.0999) == "†"
    assert tier(0.05) == "†"
    assert tier(0.01) == "*"


def test_significance_tiers_and_manifest_mismatch():
    rng = np.random.default_rng(7)
    X, y = _random_design(rng)
    fit = fit_logistic(design(X, y))
    topics = {f"i{j}": f"topic {j}" for j in range(X.shape[1])}
    rows = significance_tiers(fit, topics)
    assert [r.item_id for r in rows] == fit.item_ids
    assert all(r.tier == tier(r.p) for r in rows)
    with pytest.raises(ManifestMismatchError):
        significance_tiers(fit, {})
    csv_text = regression_csv(rows)
    assert csv_text.splitlines()[0] == "item_id,topic,coef,se,p,tier"


def _reported_rows(table, topics, year):
    return [TierRow(f"{year}-{i}", topics[f"{year}-{i}"], coef, 0.0, p, tier(p)) for i, coef, p in table]


@pytest.mark.parametrize("table,expected", [
    (HIGH_VS_DECREASE, COMMON_HIGH_VS_DECREASE),
    (INCREASE_VS_LOW, COMMON_INCREASE_VS_LOW),
])
def test_common_factors_from_reported_p_values(table, expected):
    reports = {
        "group1": _reported_rows(table["group1"], TOPICS_2014, 2014),
        "group2": _reported_rows(table["group2"], TOPICS_2015, 2015),
    }
    rep = extract_common_factors(reports)
    assert sorted(rep.topics) == sorted(expected)
    for f in rep.common_factors:
        assert set(f.items) == {"group1", "group2"}


def test_reported_item_tier():
    (row,) = [r for r in _reported_rows(HIGH_VS_DECREASE["group1"], TOPICS_2014, 2014)
              if r.item_id == "2014-24"]
    assert row.tier == "*"


def test_common_factors_edge_cases():
    a = [TierRow("1", "x", 1.0, 0.1, 0.01, "*")]
    b = [TierRow("1", "y", 1.0, 0.1, 0.01, "*")]
    assert extract_common_factors({"a": a, "b": b}).common_factors == []
    with pytest.raises(InputError):
        extract_common_factors({"a": a})
    three = {c: [TierRow("7", "shared", 2.0, 0.5, 0.001, "**"), TierRow("8", f"own {c}", 1.0, 0.5, 0.04, "*")]
             for c in "abc"}
    rep = extract_common_factors(three)
    assert rep.topics == ["shared"]
    assert rep.common_factors[0].signs() == {c: (1,) for c in "abc"}

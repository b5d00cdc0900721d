import numpy as np
import pytest
from scipy import stats as sps
from scipy.special import expit

from medlfdr import Dataset, DataError, fit_binary, fit_interaction, fit_linear
from medlfdr.regression import (FLAG_CONSTANT_MEDIATOR, FLAG_RANK_DEFICIENT,
                                FLAG_ZERO_VARIANCE)

from oracles import logistic_mle_bfgs, logistic_nll, numeric_hessian, textbook_ols


def _dataset(n, m, seed, q=0, binary=False, alpha=0.3, beta=0.4):
    rng = np.random.default_rng(seed)
    x = rng.normal(2.0, 0.75, n)
    z = rng.normal(size=(n, q)) if q else None
    m_mat = np.empty((n, m))
    y_mat = np.empty((n, m))
    for i in range(m):
        mi = x * alpha + rng.normal(size=n)
        if z is not None:
            mi = mi + z @ np.full(q, 1.5)
        lin = mi * beta + x * rng.normal(1.0, 0.7)
        if z is not None:
            lin = lin + z @ np.full(q, 0.3)
        y_mat[:, i] = (rng.uniform(size=n) < expit(lin)) if binary else lin + rng.normal(size=n)
        m_mat[:, i] = mi
    return Dataset(x=x, m_mat=m_mat, y_mat=y_mat, z_mat=z,
                   outcome_kind="binary" if binary else "continuous")


def test_exact_linear_relation_flags_degenerate_variance():
    x = np.array([1.0, 2.0, 3.0])
    m_col = np.array([2.0, 4.0, 6.0])
    y = np.array([1.0, 0.5, 2.0])
    ds = Dataset(x=x, m_mat=m_col[:, None], y_mat=y[:, None])
    stats = fit_linear(ds)
    assert stats.a[0] == pytest.approx(np.sqrt(3) * 2.0)
    assert stats.var1[0] == 0.0
    # M = 2x makes the outcome design collinear as well; either diagnostic
    # is accurate, what matters is that the hypothesis is excluded
    assert {f.code for f in stats.flags} <= {FLAG_ZERO_VARIANCE, FLAG_RANK_DEFICIENT}
    assert len(stats.flags) == 1
    assert not stats.ok[0]


def test_single_hypothesis_matches_textbook_normal_equations():
    ds = _dataset(n=100, m=1, seed=5, q=2)
    stats = fit_linear(ds)

    d1 = np.column_stack([ds.x, ds.z_mat])
    coef1, s2a, cov1 = textbook_ols(d1, ds.m_mat[:, 0])
    d2 = np.column_stack([ds.m_mat[:, 0], ds.x, ds.z_mat])
    coef2, s2b, cov2 = textbook_ols(d2, ds.y_mat[:, 0])

    n = ds.n
    assert stats.a[0] == pytest.approx(np.sqrt(n) * coef1[0], rel=1e-10)
    assert stats.b[0] == pytest.approx(np.sqrt(n) * coef2[0], rel=1e-10)
    assert stats.var1[0] == pytest.approx(n * cov1[0, 0] / 1.0, rel=1e-10)
    assert stats.var2[0] == pytest.approx(n * cov2[0, 0] / 1.0, rel=1e-10)


def test_null_data_mean_a_within_three_standard_errors():
    ds = _dataset(n=100, m=1000, seed=11, alpha=0.0, beta=0.0)
    stats = fit_linear(ds)
    a = stats.a[stats.ok]
    se = a.std(ddof=1) / np.sqrt(a.size)
    assert abs(a.mean()) < 3 * se


def test_mediator_residuals_orthogonal_to_design():
    ds = _dataset(n=80, m=40, seed=3, q=1)
    stats = fit_linear(ds)
    design = np.column_stack([ds.x, ds.z_mat])
    # reconstruct the full coefficient vectors the fit implies
    coef = np.linalg.lstsq(design, ds.m_mat, rcond=None)[0]
    np.testing.assert_allclose(np.sqrt(ds.n) * coef[0], stats.a, rtol=1e-9)
    resid = ds.m_mat - design @ coef
    scale = np.abs(design).sum(axis=0).max() * np.abs(ds.m_mat).max()
    assert np.max(np.abs(design.T @ resid)) < 1e-8 * scale


def test_outcome_scale_equivariance_is_exact():
    ds = _dataset(n=60, m=8, seed=9)
    stats = fit_linear(ds)
    c = 3.5
    scaled = Dataset(x=ds.x, m_mat=ds.m_mat, y_mat=c * ds.y_mat)
    stats_c = fit_linear(scaled)
    np.testing.assert_allclose(stats_c.b, c * stats.b, rtol=1e-12)
    np.testing.assert_allclose(stats_c.var2, c * c * stats.var2, rtol=1e-12)
    np.testing.assert_array_equal(stats_c.a, stats.a)


def test_empty_confounder_block_equals_no_confounder():
    ds = _dataset(n=50, m=6, seed=21)
    with_empty = Dataset(x=ds.x, m_mat=ds.m_mat, y_mat=ds.y_mat,
                         z_mat=np.empty((ds.n, 0)))
    s0 = fit_linear(ds)
    s1 = fit_linear(with_empty)
    np.testing.assert_array_equal(s0.a, s1.a)
    np.testing.assert_array_equal(s0.b, s1.b)
    np.testing.assert_array_equal(s0.var1, s1.var1)
    np.testing.assert_array_equal(s0.var2, s1.var2)


def test_variances_strictly_positive_unless_flagged():
    ds = _dataset(n=100, m=200, seed=17)
    stats = fit_linear(ds)
    ok = stats.ok
    assert np.all(stats.var1[ok] > 0)
    assert np.all(stats.var2[ok] > 0)


def test_per_hypothesis_exposure_variant_matches_shared():
    ds = _dataset(n=70, m=5, seed=2)
    x_mat = np.tile(ds.x[:, None], (1, ds.m))
    variant = Dataset(x=x_mat, m_mat=ds.m_mat, y_mat=ds.y_mat)
    s0 = fit_linear(ds)
    s1 = fit_linear(variant)
    np.testing.assert_allclose(s1.a, s0.a, rtol=1e-12)
    np.testing.assert_allclose(s1.var1, s0.var1, rtol=1e-12)
    np.testing.assert_allclose(s1.b, s0.b, rtol=1e-12)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(x=np.ones(2), m_mat=np.ones((2, 1)), y_mat=np.ones((2, 1)))
    with pytest.raises(DataError):
        Dataset(x=np.zeros(5), m_mat=np.ones((5, 1)), y_mat=np.ones((5, 1)))
    with pytest.raises(DataError):
        Dataset(x=np.ones(5), m_mat=np.ones((5, 2)), y_mat=np.ones((5, 1)))
    with pytest.raises(DataError):
        Dataset(x=np.arange(5.0), m_mat=np.ones((5, 1)),
                y_mat=np.full((5, 1), 0.5), outcome_kind="binary")
    # confounders eat degrees of freedom: need n > q + 2
    with pytest.raises(DataError):
        Dataset(x=np.arange(4.0), m_mat=np.ones((4, 1)), y_mat=np.ones((4, 1)),
                z_mat=np.ones((4, 2)))


# --- binary outcome -------------------------------------------------------


def test_logistic_fit_matches_bfgs_oracle():
    ds = _dataset(n=50, m=1, seed=31, q=1, binary=True)
    stats = fit_binary(ds)
    design = np.column_stack([ds.m_mat[:, 0], ds.x, ds.z_mat])
    y = ds.y_mat[:, 0]
    ref = logistic_mle_bfgs(design, y)
    assert stats.b[0] == pytest.approx(np.sqrt(ds.n) * ref[0], abs=1e-8)

    hess = numeric_hessian(logistic_nll, ref, args=(design, y))
    var_ref = ds.n * np.linalg.inv(hess)[0, 0]
    assert stats.var2[0] == pytest.approx(var_ref, rel=1e-4)


def test_binary_null_z_scores_standard_normal():
    # beta = 0 everywhere (alpha nonzero), large n: b/sqrt(var2) ~ N(0,1)
    ds = _dataset(n=400, m=300, seed=13, binary=True, alpha=0.3, beta=0.0)
    stats = fit_binary(ds)
    z = stats.b[stats.ok] / np.sqrt(stats.var2[stats.ok])
    assert sps.kstest(z, "norm").pvalue > 0.01


def test_constant_mediator_column_flagged():
    ds = _dataset(n=60, m=3, seed=41, binary=True)
    m_mat = ds.m_mat.copy()
    m_mat[:, 1] = 2.0
    bad = Dataset(x=ds.x, m_mat=m_mat, y_mat=ds.y_mat, outcome_kind="binary")
    stats = fit_binary(bad)
    codes = {f.index: f.code for f in stats.flags}
    assert codes.get(1) == FLAG_CONSTANT_MEDIATOR
    assert stats.ok[0] and stats.ok[2]


def test_separated_outcome_flagged():
    rng = np.random.default_rng(8)
    n = 40
    x = rng.normal(2, 0.75, n)
    mi = rng.normal(size=n)
    y = (mi > 0).astype(float)  # perfectly separated on the mediator
    ds = Dataset(x=x, m_mat=mi[:, None], y_mat=y[:, None], outcome_kind="binary")
    stats = fit_binary(ds)
    assert len(stats.flags) == 1
    assert stats.flags[0].code in ("separation", "no_convergence")


# --- interaction outcome --------------------------------------------------


def test_interaction_small_instance_matches_textbook():
    ds = _dataset(n=40, m=1, seed=51)
    stats = fit_interaction(ds)
    d2 = np.column_stack([ds.m_mat[:, 0], ds.x, ds.m_mat[:, 0] * ds.x])
    coef, s2, cov = textbook_ols(d2, ds.y_mat[:, 0])
    assert stats.b[0] == pytest.approx(np.sqrt(ds.n) * coef[0], rel=1e-10)
    assert stats.var2[0] == pytest.approx(ds.n * cov[0, 0], rel=1e-10)


def test_interaction_agrees_with_linear_when_no_interaction_in_truth():
    n = 4000
    ds = _dataset(n=n, m=40, seed=61)
    s_lin = fit_linear(ds)
    s_int = fit_interaction(ds)
    np.testing.assert_array_equal(s_int.a, s_lin.a)
    # same estimand; the extra (irrelevant, collinear) regressor only adds
    # sampling noise with variance var2_int - var2_lin per hypothesis
    diff_sd = np.sqrt(np.maximum(s_int.var2 - s_lin.var2, 1e-12) / n)
    raw_diff = np.abs(s_int.b - s_lin.b) / np.sqrt(n)
    assert np.all(raw_diff < 5 * diff_sd + 1e-6)
    assert abs(np.mean(s_int.b - s_lin.b)) / np.sqrt(n) < 0.02


def test_interaction_constant_exposure_is_rank_deficient():
    rng = np.random.default_rng(71)
    n = 50
    x = np.full(n, 2.0)
    m_mat = rng.normal(size=(n, 3))
    y_mat = m_mat + rng.normal(size=(n, 3))
    ds = Dataset(x=x, m_mat=m_mat, y_mat=y_mat)
    stats = fit_interaction(ds)
    assert all(f.code == FLAG_RANK_DEFICIENT for f in stats.flags)
    assert len(stats.flags) == 3

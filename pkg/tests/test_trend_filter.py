import warnings

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import dense_trend_filter
from pnnreg.baselines import TrendFilterSpec, trend_filter
from pnnreg.baselines.trend_filter import (ConvergenceWarning, _dtd_bands, difference_matrix, diff, diff_t,
                                           kkt_violation, objective, polynomial_fit)
from pnnreg.baselines.tv1d import tv1d_denoise


def cvx_trend_filter(y, lam, m):
    n = len(y)
    theta = cp.Variable(n)
    D = difference_matrix(n, m + 1)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(y - theta) / n + lam * cp.norm1(D @ theta)))
    prob.solve(solver=cp.CLARABEL)
    return theta.value


def test_lambda_zero_returns_y():
    y = np.random.default_rng(0).normal(size=50)
    for m in range(3):
        np.testing.assert_allclose(trend_filter(y, TrendFilterSpec(m=m, lam=0.0)).yhat, y, atol=1e-8)


def test_huge_lambda_gives_line():
    rng = np.random.default_rng(1)
    y = rng.normal(size=60)
    res = trend_filter(y, TrendFilterSpec(m=1, lam=1e8, max_iter=20000))
    np.testing.assert_allclose(res.yhat, polynomial_fit(y, 1), atol=1e-4)


def test_small_example_matches_oracle():
    y = np.array([0.0, 0.0, 1.0, 1.0, 1.0])
    res = trend_filter(y, TrendFilterSpec(m=0, lam=0.1))
    np.testing.assert_allclose(res.yhat, dense_trend_filter(y, 5 * 0.1 / 2, 0), atol=1e-5)
    np.testing.assert_allclose(res.yhat, cvx_trend_filter(y, 0.1, 0), atol=1e-5)


@pytest.mark.parametrize("m", [0, 1, 2, 3])
def test_matches_cvxpy(m):
    rng = np.random.default_rng(10 + m)
    n = 80
    x = np.linspace(0, 1, n)
    y = np.sin(6 * x) + 0.2 * rng.normal(size=n)
    lam = 10.0 ** (-2 - m)
    res = trend_filter(y, TrendFilterSpec(m=m, lam=lam, tol_primal=1e-9, tol_dual=1e-9, max_iter=50000))
    ref = cvx_trend_filter(y, lam, m)
    assert objective(y, res.yhat, lam, m) <= objective(y, ref, lam, m) + 1e-7
    np.testing.assert_allclose(res.yhat, ref, atol=1e-3)


@given(st.integers(0, 2**20), st.integers(0, 3), st.floats(1e-3, 1.0))
def test_n5_dense_oracle(seed, m, lam):
    y = np.random.default_rng(seed).normal(size=5)
    res = trend_filter(y, TrendFilterSpec(m=m, lam=lam, tol_primal=1e-10, tol_dual=1e-10, max_iter=100000))
    np.testing.assert_allclose(res.yhat, dense_trend_filter(y, 5 * lam / 2, m), atol=1e-5)


@given(st.integers(0, 2**20), st.integers(0, 3), st.floats(1e-4, 1.0))
def test_objective_certificate(seed, m, lam):
    rng = np.random.default_rng(seed)
    y = np.cumsum(rng.normal(size=40)) * 0.1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        res = trend_filter(y, TrendFilterSpec(m=m, lam=lam))
    f = objective(y, res.yhat, lam, m)
    assert f <= objective(y, y, lam, m) + 1e-9
    assert f <= objective(y, polynomial_fit(y, m), lam, m) + 1e-9


@pytest.mark.parametrize("m,lam", [(0, 1e-2), (1, 1e-3), (2, 1e-4), (3, 1e-5)])
def test_kkt_certificate(m, lam):
    rng = np.random.default_rng(3)
    n = 200
    x = np.linspace(0, 1, n)
    y = np.abs(x - 0.4) + 0.05 * rng.normal(size=n)
    res = trend_filter(y, TrendFilterSpec(m=m, lam=lam, tol_primal=1e-9, tol_dual=1e-9, max_iter=50000))
    kkt = res.meta["kkt"] if m else kkt_violation(y, res.yhat, lam, m)
    assert kkt <= 1e-5
    if m:
        assert np.max(np.abs(res.meta["dual"])) <= 1.0


def test_warm_start_agrees():
    rng = np.random.default_rng(4)
    y = np.sin(np.linspace(0, 6, 120)) + 0.1 * rng.normal(size=120)
    first = trend_filter(y, TrendFilterSpec(m=2, lam=1e-3))
    cold = trend_filter(y, TrendFilterSpec(m=2, lam=3e-4, tol_primal=1e-9, tol_dual=1e-9, max_iter=50000))
    warm = trend_filter(y, TrendFilterSpec(m=2, lam=3e-4, tol_primal=1e-9, tol_dual=1e-9, max_iter=50000),
                        warm=first)
    np.testing.assert_allclose(warm.yhat, cold.yhat, atol=1e-5)


def test_nonconvergence_warns():
    y = np.random.default_rng(5).normal(size=100)
    with pytest.warns(ConvergenceWarning):
        res = trend_filter(y, TrendFilterSpec(m=2, lam=1e-3, max_iter=2))
    assert res.meta["converged"] is False


def test_input_validation():
    with pytest.raises(ValueError):
        TrendFilterSpec(lam=-1.0)
    with pytest.raises(ValueError):
        trend_filter(np.ones(3), TrendFilterSpec(m=2, lam=1.0))


@given(st.integers(5, 30), st.integers(0, 4), st.integers(0, 2**20))
def test_difference_operators(n, k, seed):
    k = min(k, n - 1)
    rng = np.random.default_rng(seed)
    D = difference_matrix(n, k)
    t = rng.normal(size=n)
    z = rng.normal(size=n - k)
    np.testing.assert_allclose(diff(t, k), D @ t, atol=1e-10)
    np.testing.assert_allclose(diff_t(z, k), D.T @ z, atol=1e-10)
    if k:
        dtd = D.T @ D
        bands = _dtd_bands(n, k)
        for off in range(k + 1):
            np.testing.assert_allclose(bands[off, : n - off], np.diag(dtd, -off), atol=1e-12)


@given(st.integers(0, 2**20), st.floats(1e-3, 10.0))
def test_tv1d_matches_dual_oracle(seed, lam):
    y = np.random.default_rng(seed).normal(size=12)
    np.testing.assert_allclose(tv1d_denoise(y, lam), dense_trend_filter(y, lam, 0), atol=1e-7)


def test_csv_row_fields():
    from pnnreg.baselines import CSV_HEADER
    res = trend_filter(np.arange(10.0), TrendFilterSpec(m=1, lam=1.0)).with_truth(np.arange(10.0))
    row = res.csv_row()
    assert len(row) == len(CSV_HEADER) and row[0] == "tf1"

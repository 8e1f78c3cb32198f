import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from crows.analyze import (
    AnalysisError,
    GridSpec,
    analyze,
    bic,
    center_scale,
    kkt_residual,
    lambda_grid,
    lasso_path,
    lenth_pse,
    ols_refit,
    profile_csv,
)
from crows.construct import ConstructConfig, construct
from crows.design import Design
from crows.sim import Scenario, gen_response


@pytest.fixture(scope="module")
def desk_design():
    return construct(ConstructConfig(24, 31, 10, starts=20, seed=1)).design


def sylvester(m):
    H = np.array([[1]])
    for _ in range(m):
        H = np.block([[H, H], [H, -H]])
    return H


def test_center_scale_single_plus_column():
    X = np.array([[1, 1], [-1, 1], [-1, -1], [-1, -1]])
    X_cs, y_c, sc = center_scale(X, [1.0, 1.0, 1.0, 1.0])
    assert np.allclose(y_c, 0)
    assert np.allclose(X_cs[:, 0] / X_cs[0, 0], [1, -1 / 3, -1 / 3, -1 / 3])
    assert np.allclose((X_cs ** 2).sum(axis=0), 4)
    assert np.allclose(X_cs[:, 1], X[:, 1])


def test_center_scale_drops_constant_columns():
    X = np.array([[1, -1, 1], [-1, -1, 1], [1, -1, -1]])
    _, _, sc = center_scale(X, [0.0, 1.0, 2.0])
    assert sc.dropped == (2,) and list(sc.columns) == [1, 3]
    with pytest.raises(AnalysisError, match="no estimable factors"):
        center_scale(-np.ones((3, 2)), [0.0, 1.0, 2.0])


def test_single_column_soft_threshold():
    x = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    y = np.array([2.0, 2.0, -2.0, -2.0])
    path = lasso_path(x, y, np.array([0.5]))
    assert path.coef[0, 0] == pytest.approx(1.5, abs=1e-12)


def test_orthonormal_closed_form():
    rng = np.random.default_rng(4)
    H = sylvester(4).astype(float)  # 16 x 16
    X_cs = H[:, 1:11]
    y = rng.normal(size=16)
    y_c = y - y.mean()
    path = lasso_path(X_cs, y_c)
    z = X_cs.T @ y_c / 16
    for lam, coef in zip(path.lambdas, path.coef):
        expected = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
        assert np.max(np.abs(coef - expected)) <= 1e-8


def test_grid_shape():
    rng = np.random.default_rng(0)
    X_cs, y_c, _ = center_scale(rng.choice([-1, 1], size=(12, 20)), rng.normal(size=12))
    grid, lam_max = lambda_grid(X_cs, y_c, GridSpec(scale=2.0))
    assert len(grid) == 100 and grid[0] == pytest.approx(lam_max)
    assert np.all(np.diff(grid) < 0)
    assert grid[-1] == pytest.approx(2.0 * math.exp(-8) / 12)
    path = lasso_path(X_cs, y_c, GridSpec(scale=2.0))
    assert np.all(path.coef[0] == 0.0)


def test_zero_response_gives_zero_path():
    rng = np.random.default_rng(1)
    X_cs, y_c, _ = center_scale(rng.choice([-1, 1], size=(8, 10)), np.full(8, 3.0))
    path = lasso_path(X_cs, y_c)
    assert np.all(path.coef == 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 30), st.integers(3, 40), st.integers(0, 2**32 - 1))
def test_kkt_along_path(n, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.choice([-1, 1], size=(n, p))
    y = X[:, : min(3, p)].sum(axis=1) + rng.normal(size=n)
    X_cs, y_c, _ = center_scale(X, y)
    path = lasso_path(X_cs, y_c)
    assert path.all_converged
    for lam, coef in zip(path.lambdas, path.coef):
        assert kkt_residual(X_cs, y_c, coef, lam) <= 1e-6


def test_objective_matches_generic_solver():
    # second route: bound-constrained quasi-Newton on the split b = b+ - b-
    rng = np.random.default_rng(8)
    X_cs, y_c, _ = center_scale(rng.choice([-1, 1], size=(15, 9)), rng.normal(size=15))
    n, p = X_cs.shape
    lam = 0.05
    path = lasso_path(X_cs, y_c, np.array([lam]))

    def f(w):
        b = w[:p] - w[p:]
        r = y_c - X_cs @ b
        g = -X_cs.T @ r / n
        return r @ r / (2 * n) + lam * w.sum(), np.concatenate([g + lam, -g + lam])

    sol = minimize(f, np.zeros(2 * p), jac=True, bounds=[(0, None)] * (2 * p), method="L-BFGS-B",
                   options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10000})
    ours = f(np.concatenate([np.maximum(path.coef[0], 0), np.maximum(-path.coef[0], 0)]))[0]
    assert ours <= sol.fun + 1e-10
    assert np.allclose(path.coef[0], sol.x[:p] - sol.x[p:], atol=1e-5)


def test_refit_residuals_orthogonal():
    rng = np.random.default_rng(2)
    X = rng.choice([-1, 1], size=(12, 6)).astype(float)
    y = rng.normal(size=12)
    b0, b, rss = ols_refit(X, y, (2, 5))
    A = np.column_stack([np.ones(12), X[:, 1], X[:, 4]])
    resid = y - A @ np.concatenate([[b0], b])
    assert np.max(np.abs(A.T @ resid)) < 1e-8
    assert rss == pytest.approx(resid @ resid)


def test_bic_forms():
    assert bic(8.0, 10, 3, 2.0) == pytest.approx(2.0 + 3 * math.log(10))
    assert bic(8.0, 10, 3, form="log-rss") == pytest.approx(10 * math.log(0.8) + 3 * math.log(10))
    with pytest.raises(AnalysisError):
        bic(1.0, 5, 1, 1.0, "aic")


def test_planted_effect_recovered(desk_design):
    X = desk_design.entries.astype(float)
    for seed in range(30):
        y = gen_response(desk_design, Scenario(D=4.0, a=1, active=(7,)), seed=seed)
        # oracle: the best single-factor regression picks the planted factor
        rss = [ols_refit(X, y, (j,))[2] for j in range(1, 32)]
        assert int(np.argmin(rss)) + 1 == 7
        res = analyze(desk_design, y, 1.0, "positive")
        assert 7 in res.hits
        assert all(res.estimates[j] >= 1 / 8 for j in res.hits)
    text = profile_csv(res)
    assert text.splitlines()[0].startswith("lambda,bic,support,f1")
    assert len(text.splitlines()) == 101


def test_noiseless_planted_effect_is_exact(desk_design):
    y = gen_response(desk_design, Scenario(D=4.0, a=1, active=(7,)), seed=0, noise=False)
    res = analyze(desk_design, y, 1.0)
    assert res.hits == (7,)
    assert res.estimates[7] == pytest.approx(2.0)


def test_constant_response_has_no_hits(desk_design):
    assert analyze(desk_design, np.full(24, 5.0), 1.0).hits == ()


def test_wrong_direction_has_no_hits(desk_design):
    y = gen_response(desk_design, Scenario(D=4.0, a=1, active=(3,), direction="negative"), seed=5, noise=False)
    assert analyze(desk_design, y, 1.0, "positive").hits == ()
    assert analyze(desk_design, y, 1.0, "negative").hits == (3,)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_direction_coherence(seed):
    rng = np.random.default_rng(seed)
    X = rng.choice([-1, 1], size=(16, 20))
    y = 2 * X[:, 4] + rng.normal(size=16)
    a = analyze(X, y, 1.0, "positive")
    b = analyze(X, -y, 1.0, "negative")
    assert a.hits == b.hits
    for j in a.hits:
        assert a.estimates[j] >= 1 / 8


def test_scale_equivariance(desk_design):
    y = gen_response(desk_design, Scenario(D=2.0, a=2, active=(4, 19)), seed=9)
    base = analyze(desk_design, y, 1.0).hits
    assert analyze(desk_design, 4.0 * y + 64.0, 4.0).hits == base


def test_bad_arguments(desk_design):
    with pytest.raises(AnalysisError):
        analyze(desk_design, np.zeros(24), 0.0)
    with pytest.raises(AnalysisError):
        analyze(desk_design, np.zeros(24), 1.0, "sideways")
    with pytest.raises(AnalysisError):
        analyze(desk_design, np.zeros(23), 1.0)


def test_lenth_examples():
    assert lenth_pse([2.0] * 6) == pytest.approx(3.0)
    assert lenth_pse([1, 1, 1, 1, 100]) == pytest.approx(1.5)
    assert lenth_pse([0.0, 0.0, 0.0]) == 0.0
    with pytest.raises(AnalysisError):
        lenth_pse([1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=40))
def test_lenth_symmetrization(values):
    v = np.array(values)
    assert lenth_pse(np.concatenate([v, -v])) == pytest.approx(lenth_pse(v))

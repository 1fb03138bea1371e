import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drme.kernels import GaussianKernel, kernel_eval
from drme.nuisance import (KnownPropensity, OracleGaussianNuisance, PropensityModel,
                           fit_outcome_regression, fit_propensity, oracle_m,
                           predict_propensity)


def gauss_jordan_inverse(M):
    """Dense inverse by Gauss-Jordan elimination with partial pivoting."""
    n = len(M)
    aug = [list(map(float, row)) + [1.0 if i == j else 0.0 for j in range(n)]
           for i, row in enumerate(M)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(aug[r][col]))
        aug[col], aug[piv] = aug[piv], aug[col]
        p = aug[col][col]
        aug[col] = [v / p for v in aug[col]]
        for r in range(n):
            if r != col:
                f = aug[r][col]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[col])]
    return np.array([row[n:] for row in aug])


def krr_oracle(X, A, Y, X_eval, V, arm, ck, yk, lam):
    Xa, Ya = X[A == arm], Y[A == arm]
    n_a = len(Xa)
    K = np.array([[kernel_eval(ck, xi, xj) for xj in Xa] for xi in Xa])
    R = gauss_jordan_inverse(K + lam * n_a * np.eye(n_a))
    G = np.array([[kernel_eval(ck, x, xj) for xj in Xa] for x in X_eval])
    U = np.array([[kernel_eval(yk, v, y) for v in V] for y in Ya])
    return G @ R @ U


# ---------------------------------------------------------------- propensity

def test_no_signal_propensity_is_half():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((2000, 3))
    A = np.tile([0, 1], 1000)
    rng.shuffle(A)
    model = fit_propensity(X, A)
    assert model.converged
    assert np.max(np.abs(model.weights)) < 0.1
    assert np.mean(np.abs(model.predict(X, 1) - 0.5)) < 0.02
    assert abs(predict_propensity(model, np.zeros(3), 1) - 0.5) < 0.02


def test_logistic_recovery():
    rng = np.random.default_rng(1)
    w_true, b_true = np.array([0.8, -0.5, 0.3]), 0.2
    X = rng.standard_normal((50_000, 3))
    A = (rng.random(50_000) < 1 / (1 + np.exp(-(X @ w_true + b_true)))).astype(int)
    model = fit_propensity(X, A, ridge=1e-8)
    np.testing.assert_allclose(model.weights, w_true, atol=0.05)
    assert abs(model.intercept - b_true) < 0.05


def test_separable_data_with_large_ridge_stays_finite():
    X = np.linspace(-2, 2, 40)[:, None]
    A = (X[:, 0] > 0).astype(int)
    model = fit_propensity(X, A, ridge=1.0)
    assert np.all(np.isfinite(model.weights)) and abs(model.weights[0]) < 10


def test_single_arm_is_rejected():
    with pytest.raises(ValueError, match="degenerate treatment assignment"):
        fit_propensity(np.zeros((5, 1)), np.ones(5))


def test_nonconvergence_warns_but_returns():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((200, 2))
    A = (rng.random(200) < 0.4).astype(int)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = fit_propensity(X, A, max_iter=1, tol=1e-30)
    assert not model.converged
    assert any("converge" in str(w.message) for w in caught)


def test_zero_model_predicts_half():
    m = PropensityModel(np.zeros(2), 0.0)
    assert predict_propensity(m, [0.3, -1.0], 1) == 0.5
    assert predict_propensity(m, [0.3, -1.0], 0) == 0.5


def test_clipping_hits_bound_exactly():
    m = PropensityModel(np.array([1.0]), 0.0, clip_lo=0.01, clip_hi=0.99)
    assert predict_propensity(m, [20.0], 1) == 0.99
    assert predict_propensity(m, [20.0], 0) == 0.01


def test_invalid_clip():
    with pytest.raises(ValueError):
        PropensityModel(np.zeros(1), 0.0, clip_lo=0.6, clip_hi=0.4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=2), st.floats(-5, 5),
       st.floats(-10, 10), st.floats(-10, 10))
def test_predictions_complementary_and_clipped(w, b, x1, x2):
    m = PropensityModel(np.array(w), b, clip_lo=0.01, clip_hi=0.99)
    X = np.array([[x1, x2]])
    p1 = m.raw(X)[0]
    assert p1 + (1 - p1) == pytest.approx(1.0)
    for arm in (0, 1):
        p = m.predict(X, arm)[0]
        assert 0.01 <= p <= 0.99


def test_known_propensity_clips():
    kp = KnownPropensity(lambda X: np.full(len(X), 0.999), 0.02, 0.98)
    np.testing.assert_array_equal(kp.predict(np.zeros((3, 1)), 1), [0.98] * 3)
    np.testing.assert_allclose(kp.predict(np.zeros((3, 1)), 0), [0.02] * 3)


# --------------------------------------------------------- outcome regression

def _toy(seed, n=12, d_y=1):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    A = np.array([0, 1] * (n // 2))
    Y = rng.standard_normal((n, d_y)) + X[:, :1]
    return X, A, Y, rng


def test_needs_two_units_per_arm():
    X, A, Y, _ = _toy(0, n=4)
    A = np.array([0, 1, 1, 1])
    with pytest.raises(ValueError):
        fit_outcome_regression(X, A, Y, GaussianKernel(1.0))


def test_nan_input_is_not_pd():
    X, A, Y, _ = _toy(0)
    X[0, 0] = np.nan
    with pytest.raises(ValueError, match="covariate kernel matrix not PD"):
        fit_outcome_regression(X, A, Y, GaussianKernel(1.0))


def test_infinite_ridge_shrinks_to_zero():
    X, A, Y, rng = _toy(1)
    reg = fit_outcome_regression(X, A, Y, GaussianKernel(1.0), 1e6, 1e6)
    V = rng.standard_normal((3, 1))
    for arm in (0, 1):
        assert np.max(np.abs(reg.predict_m(arm, rng.standard_normal((5, 2)), V,
                                           GaussianKernel(1.0)))) < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_matches_dense_inverse_oracle(seed):
    X, A, Y, rng = _toy(seed, n=12, d_y=2)
    ck, yk = GaussianKernel(1.4), GaussianKernel(0.9)
    reg = fit_outcome_regression(X, A, Y, ck, 0.05, 0.02)
    X_eval, V = rng.standard_normal((4, 2)), rng.standard_normal((2, 2))
    for arm, lam in ((0, 0.05), (1, 0.02)):
        np.testing.assert_allclose(reg.predict_m(arm, X_eval, V, yk),
                                   krr_oracle(X, A, Y, X_eval, V, arm, ck, yk, lam),
                                   atol=1e-10, rtol=0)


def test_interpolation_limit():
    X = np.array([[0.0], [3.0], [6.0], [9.0], [12.0], [1.5], [4.5], [7.5], [10.5], [13.5]])
    A = np.array([1] * 5 + [0] * 5)
    Y = np.linspace(-1, 1, 10)[:, None]
    reg = fit_outcome_regression(X, A, Y, GaussianKernel(1.0), 1e-10, 1e-10)
    yk = GaussianKernel(0.7)
    V = np.array([[0.2]])
    pred = reg.predict_m(1, X[:5], V, yk)
    target = yk.matrix(Y[:5], V)
    assert np.max(np.abs(pred - target)) < 1e-6


def test_columns_are_independent():
    X, A, Y, rng = _toy(3)
    reg = fit_outcome_regression(X, A, Y, GaussianKernel(1.0))
    yk = GaussianKernel(1.0)
    V = rng.standard_normal((2, 1))
    Xe = rng.standard_normal((6, 2))
    both = reg.predict_m(1, Xe, V, yk)
    np.testing.assert_allclose(both, np.hstack([reg.predict_m(1, Xe, V[:1], yk),
                                                reg.predict_m(1, Xe, V[1:], yk)]), rtol=1e-12, atol=1e-15)


def test_predictions_bounded():
    rng = np.random.default_rng(8)
    for _ in range(20):
        X, A, Y, _ = _toy(int(rng.integers(1000)), n=20)
        reg = fit_outcome_regression(X, A, Y, GaussianKernel(float(rng.uniform(0.3, 3))),
                                     float(rng.uniform(1e-4, 1)), float(rng.uniform(1e-4, 1)))
        m = reg.predict_m(int(rng.integers(2)), 3 * rng.standard_normal((30, 2)),
                          rng.standard_normal((4, 1)), GaussianKernel(0.8))
        assert np.max(np.abs(m)) <= 1 + 1e-6


def test_location_gradient_matches_differences():
    X, A, Y, rng = _toy(4)
    reg = fit_outcome_regression(X, A, Y, GaussianKernel(1.0))
    yk = GaussianKernel(0.8)
    bound = reg.at(rng.standard_normal((5, 2)))
    V = rng.standard_normal((2, 1))
    h = 1e-6
    Vp, Vm = V.copy(), V.copy()
    Vp[1, 0] += h
    Vm[1, 0] -= h
    fd = (bound.m(0, Vp, yk)[:, 1] - bound.m(0, Vm, yk)[:, 1]) / (2 * h)
    np.testing.assert_allclose(bound.m_grad(0, V, yk, 1)[:, 0], fd, rtol=1e-6, atol=1e-10)


# ------------------------------------------------------------------ oracle

def _g(X):
    return X[:, 0]


def test_oracle_peak_value():
    nu = OracleGaussianNuisance(_g, 0.0, 0.3, 1.0, 1.0)
    assert oracle_m(nu, 1, [0.5], 0.8) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert oracle_m(nu, 1, [0.5], 0.8) == pytest.approx(0.707107, abs=1e-6)


def test_oracle_noiseless_is_kernel():
    nu = OracleGaussianNuisance(_g, 0.2, 0.0, 0.0, 1.3)
    assert oracle_m(nu, 0, [0.4], 1.1) == kernel_eval(GaussianKernel(1.3), 1.1, 0.6)


def test_oracle_closed_form_value():
    nu = OracleGaussianNuisance(_g, 0.0, 0.0, 1.0, 1.0)
    assert oracle_m(nu, 0, [0.0], 2.0) == pytest.approx(math.exp(-1) / math.sqrt(2), abs=1e-15)
    assert oracle_m(nu, 0, [0.0], 2.0) == pytest.approx(0.260130, abs=1e-6)


def test_oracle_against_monte_carlo():
    nu = OracleGaussianNuisance(_g, -0.4, 0.25, 0.8, 1.2)
    k = GaussianKernel(1.2)
    rng = np.random.default_rng(9)
    eps = rng.standard_normal(1_000_000)
    gx, v = 0.3, 1.0
    for arm in (0, 1):
        y = gx + nu.shift(arm) + 0.8 * eps
        vals = np.exp(-(v - y) ** 2 / (2 * 1.2**2))
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - oracle_m(nu, arm, [gx], v)) < 3 * se
    _ = k


def test_oracle_bound_checks_kernel_and_dimension():
    nu = OracleGaussianNuisance(_g, 0.0, 0.0, 1.0, 1.0)
    b = nu.at(np.zeros((3, 1)))
    with pytest.raises(ValueError):
        b.m(1, np.zeros((1, 2)))
    with pytest.raises(ValueError):
        b.m(1, np.zeros((1, 1)), GaussianKernel(2.0))
    np.testing.assert_allclose(b.m(1, [[0.0]], GaussianKernel(1.0)), 1 / math.sqrt(2))

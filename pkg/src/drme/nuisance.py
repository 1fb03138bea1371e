"""Nuisance estimation: propensity scores and kernel outcome regressions.

Both fitted models expose the same small evaluation surface used by the
score module:

* ``propensity.predict(X, arm)`` returns clipped arm probabilities;
* ``regression.at(X)`` binds a set of evaluation covariates and returns an
  object with ``m(arm, V, kernel)`` (an ``m x J`` matrix of conditional
  kernel means) and ``m_grad(arm, V, kernel, j)`` (its derivative in the
  j-th location, ``m x d_Y``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .kernels import GaussianKernel, as_points, median_heuristic

PROPENSITY_RIDGE = 1e-3
CLIP = (0.05, 0.95)
OUTCOME_RIDGE = 1e-2


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _check_arm(arm):
    if arm not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {arm!r}")


@dataclass(frozen=True)
class PropensityModel:
    weights: np.ndarray
    intercept: float
    clip_lo: float = CLIP[0]
    clip_hi: float = CLIP[1]
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        if not 0.0 < self.clip_lo < self.clip_hi < 1.0:
            raise ValueError("need 0 < clip_lo < clip_hi < 1")

    def raw(self, X) -> np.ndarray:
        """Unclipped probability of arm 1."""
        X = as_points(X)
        return _sigmoid(X @ np.asarray(self.weights, dtype=float) + self.intercept)

    def predict(self, X, arm: int) -> np.ndarray:
        _check_arm(arm)
        p1 = self.raw(X)
        p = p1 if arm == 1 else 1.0 - p1
        return np.clip(p, self.clip_lo, self.clip_hi)


def fit_propensity(X, A, ridge: float = PROPENSITY_RIDGE, clip=CLIP,
                   tol: float = 1e-8, max_iter: int = 100) -> PropensityModel:
    """Ridge-penalized logistic regression by damped Newton iterations.

    The objective is the mean log-likelihood minus ``ridge/2 * ||w||^2``;
    the intercept is not penalized. Failure to converge within ``max_iter``
    iterations sets ``converged=False`` on the returned model.
    """
    X = as_points(X)
    A = np.asarray(A, dtype=float).ravel()
    if X.shape[0] != A.shape[0]:
        raise ValueError("X and A have different numbers of rows")
    if not np.all((A == 0) | (A == 1)):
        raise ValueError("treatment must be binary")
    if A.min() == A.max():
        raise ValueError("degenerate treatment assignment: only one arm present")
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    penalty = np.full(d + 1, float(ridge))
    penalty[-1] = 0.0

    def objective(beta):
        t = Xa @ beta
        # log-likelihood of a logistic model, written stably
        ll = np.mean(A * t - np.logaddexp(0.0, t))
        return ll - 0.5 * np.sum(penalty * beta * beta)

    beta = np.zeros(d + 1)
    p0 = A.mean()
    beta[-1] = math.log(p0 / (1.0 - p0))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = _sigmoid(Xa @ beta)
        grad = Xa.T @ (A - p) / n - penalty * beta
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        w = p * (1.0 - p)
        hess = (Xa * w[:, None]).T @ Xa / n + np.diag(penalty)
        hess[np.diag_indices_from(hess)] += 1e-12
        step = np.linalg.solve(hess, grad)
        f0 = objective(beta)
        t = 1.0
        for _ in range(50):
            cand = beta + t * step
            if objective(cand) >= f0 - 1e-15:
                break
            t *= 0.5
        beta = cand
    if not converged:
        warnings.warn("propensity Newton iterations did not converge", RuntimeWarning)
    return PropensityModel(weights=beta[:-1].copy(), intercept=float(beta[-1]),
                           clip_lo=clip[0], clip_hi=clip[1], converged=converged,
                           n_iter=it)


def predict_propensity(model: PropensityModel, x, arm: int) -> float | np.ndarray:
    x_arr = np.asarray(x, dtype=float)
    out = model.predict(x_arr.reshape(1, -1) if x_arr.ndim <= 1 else x_arr, arm)
    return float(out[0]) if x_arr.ndim <= 1 else out


@dataclass
class _ArmFit:
    X: np.ndarray
    Y: np.ndarray
    ridge: float
    chol: tuple = field(repr=False)


class OutcomeRegression:
    """Per-arm kernel ridge regression of k(v, Y) on X.

    For arm a the fitted map is ``x -> k_X(x, X_a) R_a K_Y(Y_a, V)`` with
    ``R_a = (K_aa + ridge_a * n_a * I)^{-1}`` held as a Cholesky factor.
    Only the target matrix depends on the locations, so evaluations at new
    ``V`` reuse both the factor and any bound covariate kernel.
    """

    def __init__(self, arms: dict, covariate_kernel: GaussianKernel):
        self.arms = arms
        self.covariate_kernel = covariate_kernel

    def covariate_gram(self, arm: int, X_eval) -> np.ndarray:
        """Covariate kernel between X_eval and the arm-a training covariates."""
        _check_arm(arm)
        fit = self.arms[arm]
        X_eval = as_points(X_eval)
        if X_eval.shape[1] != fit.X.shape[1]:
            raise ValueError("covariate dimension mismatch")
        return self.covariate_kernel.matrix(X_eval, fit.X)

    def solve(self, arm: int, U) -> np.ndarray:
        """R_a U for a target matrix U over the arm-a training units."""
        return cho_solve(self.arms[arm].chol, U)

    def at(self, X_eval) -> "_BoundRegression":
        return _BoundRegression(self, as_points(X_eval))

    def predict_m(self, arm: int, X_eval, V, outcome_kernel: GaussianKernel) -> np.ndarray:
        return self.at(X_eval).m(arm, V, outcome_kernel)


class _BoundRegression:
    def __init__(self, reg: OutcomeRegression, X_eval: np.ndarray):
        self.reg = reg
        self.X = X_eval
        self._G = {a: reg.covariate_gram(a, X_eval) for a in (0, 1)}

    def m(self, arm: int, V, kernel: GaussianKernel) -> np.ndarray:
        _check_arm(arm)
        U = kernel.matrix(self.reg.arms[arm].Y, V)
        return self._G[arm] @ self.reg.solve(arm, U)

    def m_grad(self, arm: int, V, kernel: GaussianKernel, j: int) -> np.ndarray:
        _check_arm(arm)
        V = as_points(V)
        dU = kernel.matrix_grad(self.reg.arms[arm].Y, V[j])
        return self._G[arm] @ self.reg.solve(arm, dU)


def fit_outcome_regression(X, A, Y, covariate_kernel: GaussianKernel | None = None,
                           ridge0: float = OUTCOME_RIDGE,
                           ridge1: float = OUTCOME_RIDGE) -> OutcomeRegression:
    X = as_points(X)
    Y = as_points(Y)
    A = np.asarray(A).ravel()
    if not (X.shape[0] == Y.shape[0] == A.shape[0]):
        raise ValueError("X, A, Y have different numbers of rows")
    if covariate_kernel is None:
        covariate_kernel = GaussianKernel(median_heuristic(X))
    arms = {}
    for a, lam in ((0, ridge0), (1, ridge1)):
        if not lam > 0:
            raise ValueError("outcome ridge must be positive")
        mask = A == a
        n_a = int(mask.sum())
        if n_a < 2:
            raise ValueError(f"arm {a} has {n_a} units; need at least 2")
        Xa, Ya = X[mask], Y[mask]
        K = covariate_kernel.matrix(Xa, Xa)
        K[np.diag_indices_from(K)] += lam * n_a
        try:
            if not np.all(np.isfinite(K)):
                raise LinAlgError("non-finite entries")
            chol = cho_factor(K, lower=True)
        except LinAlgError as exc:
            raise ValueError("covariate kernel matrix not PD") from exc
        arms[a] = _ArmFit(X=Xa, Y=Ya, ridge=lam, chol=chol)
    return OutcomeRegression(arms, covariate_kernel)


@dataclass(frozen=True)
class OracleGaussianNuisance:
    """Closed-form conditional kernel means for Y = g(x) + shift + N(0, sigma^2).

    With a Gaussian outcome kernel of lengthscale l the conditional mean of
    k(v, Y) is sqrt(l^2 / (l^2 + sigma^2)) exp(-(v - g(x) - shift)^2 / (2 (l^2 + sigma^2))).
    """

    g: Callable[[np.ndarray], np.ndarray]
    delta0: float
    delta1: float
    sigma: float
    lengthscale: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")

    def shift(self, arm: int) -> float:
        _check_arm(arm)
        return self.delta1 if arm == 1 else self.delta0

    def _var(self) -> float:
        return self.lengthscale**2 + self.sigma**2

    def value(self, arm: int, gx, v) -> np.ndarray:
        s2 = self._var()
        r = np.asarray(v, dtype=float) - np.asarray(gx, dtype=float) - self.shift(arm)
        return math.sqrt(self.lengthscale**2 / s2) * np.exp(-r * r / (2.0 * s2))

    def at(self, X_eval) -> "_BoundOracle":
        return _BoundOracle(self, as_points(X_eval))

    def predict_m(self, arm: int, X_eval, V, outcome_kernel=None) -> np.ndarray:
        return self.at(X_eval).m(arm, V, outcome_kernel)


class _BoundOracle:
    def __init__(self, oracle: OracleGaussianNuisance, X: np.ndarray):
        self.oracle = oracle
        self.gx = np.asarray(oracle.g(X), dtype=float).ravel()

    def _check(self, V, kernel):
        V = as_points(V)
        if V.shape[1] != 1:
            raise ValueError("oracle nuisance is defined for scalar outcomes only")
        if kernel is not None and (kernel.lengthscale != self.oracle.lengthscale
                                   or kernel.dim_normalized):
            raise ValueError("outcome kernel does not match the oracle lengthscale")
        return V[:, 0]

    def m(self, arm: int, V, kernel=None) -> np.ndarray:
        v = self._check(V, kernel)
        return self.oracle.value(arm, self.gx[:, None], v[None, :])

    def m_grad(self, arm: int, V, kernel, j: int) -> np.ndarray:
        v = self._check(V, kernel)
        s2 = self.oracle._var()
        r = v[j] - self.gx - self.oracle.shift(arm)
        val = self.oracle.value(arm, self.gx, v[j])
        return (-r / s2 * val)[:, None]


def oracle_m(nuisance: OracleGaussianNuisance, arm: int, x, v: float, g_value=None) -> float:
    """Closed-form m_arm(x; v) for a single covariate vector."""
    gx = nuisance.g(as_points(np.asarray(x, dtype=float).reshape(1, -1)))[0] \
        if g_value is None else g_value
    return float(nuisance.value(arm, gx, v))


@dataclass(frozen=True)
class KnownPropensity:
    """Propensity given by a known function of X, clipped like a fitted model."""

    func: Callable[[np.ndarray], np.ndarray]
    clip_lo: float = 0.0
    clip_hi: float = 1.0

    def predict(self, X, arm: int) -> np.ndarray:
        _check_arm(arm)
        p1 = np.asarray(self.func(as_points(X)), dtype=float)
        p = p1 if arm == 1 else 1.0 - p1
        return np.clip(p, self.clip_lo, self.clip_hi)

"""Doubly robust witness features and the ridge-stabilized Hotelling statistic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .chi2 import chi2_sf, noncentral_chi2_cdf  # noqa: F401  (re-exported)
from .kernels import GaussianKernel, as_points

SCORE_KINDS = ("dr", "ipw", "dm", "naive")
SCHEMA_VERSION = 1


class FeatureMap:
    """Pseudo-features on one evaluation split, for any set of locations.

    Everything that does not depend on the locations (inverse-propensity
    weights, the bound outcome regression) is computed once here, so the
    map can be evaluated cheaply for many candidate location sets.

    Parameters
    ----------
    X, A, Y : arrays
        Covariates, binary treatment and outcomes of the evaluation split.
    propensity : object with ``predict(X, arm)``
    regression : object with ``at(X)`` or None
        Not needed for the ``ipw`` and ``naive`` kinds.
    kernel : GaussianKernel
        Outcome kernel.
    kind : {'dr', 'ipw', 'dm', 'naive'}
    bound : optional
        ``regression.at(X)`` computed earlier for the same rows, to share
        between feature maps of different kinds.
    """

    def __init__(self, X, A, Y, propensity, regression, kernel: GaussianKernel,
                 kind: str = "dr", bound=None):
        if kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {kind!r}")
        self.X = as_points(X)
        self.Y = as_points(Y)
        self.A = np.asarray(A).ravel().astype(int)
        if not (self.X.shape[0] == self.Y.shape[0] == self.A.shape[0]):
            raise ValueError("X, A, Y have different numbers of rows")
        self.kernel = kernel
        self.kind = kind
        self.n = self.A.shape[0]
        self.weights = {}
        if kind in ("dr", "ipw"):
            for a in (0, 1):
                p = np.asarray(propensity.predict(self.X, a), dtype=float)
                if np.any(p <= 0):
                    raise RuntimeError("propensity prediction at or below zero")
                self.weights[a] = (self.A == a) / p
        elif kind == "naive":
            for a in (0, 1):
                frac = np.mean(self.A == a)
                if frac == 0:
                    raise ValueError(f"arm {a} absent from the evaluation split")
                self.weights[a] = (self.A == a) / frac
        self._bound = None
        if kind in ("dr", "dm"):
            if regression is None:
                raise ValueError(f"score kind {kind!r} needs an outcome regression")
            self._bound = bound if bound is not None else regression.at(self.X)

    @property
    def dim(self) -> int:
        return self.Y.shape[1]

    def values(self, V) -> np.ndarray:
        """The ``n x J`` pseudo-feature matrix at locations ``V``."""
        V = as_points(V)
        if V.shape[1] != self.dim:
            raise ValueError(f"locations have dimension {V.shape[1]}, outcomes {self.dim}")
        K = self.kernel.matrix(self.Y, V) if self.kind != "dm" else None
        if self.kind == "naive" or self.kind == "ipw":
            return (self.weights[1] - self.weights[0])[:, None] * K
        M1 = self._bound.m(1, V, self.kernel)
        M0 = self._bound.m(0, V, self.kernel)
        if self.kind == "dm":
            return M1 - M0
        w1 = self.weights[1][:, None]
        w0 = self.weights[0][:, None]
        return (w1 * (K - M1) + M1) - (w0 * (K - M0) + M0)

    def column_grad(self, V, j: int) -> np.ndarray:
        """Derivative of column j of ``values(V)`` in location j; shape ``n x d_Y``."""
        V = as_points(V)
        dK = self.kernel.matrix_grad(self.Y, V[j]) if self.kind != "dm" else None
        if self.kind in ("naive", "ipw"):
            return (self.weights[1] - self.weights[0])[:, None] * dK
        dM1 = self._bound.m_grad(1, V, self.kernel, j)
        dM0 = self._bound.m_grad(0, V, self.kernel, j)
        if self.kind == "dm":
            return dM1 - dM0
        w1 = self.weights[1][:, None]
        w0 = self.weights[0][:, None]
        return (w1 * (dK - dM1) + dM1) - (w0 * (dK - dM0) + dM0)


@dataclass
class PseudoFeatureMatrix:
    values: np.ndarray
    locations: np.ndarray
    score_kind: str = "dr"

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("non-finite pseudo-features")


def _features(kind, X, A, Y, V, propensity, regression, kernel):
    fmap = FeatureMap(X, A, Y, propensity, regression, kernel, kind)
    return PseudoFeatureMatrix(fmap.values(V), as_points(V), kind)


def dr_pseudo_features(X, A, Y, V, propensity, regression, kernel) -> PseudoFeatureMatrix:
    """Augmented inverse-propensity contrast of k_V(Y) between the two arms."""
    return _features("dr", X, A, Y, V, propensity, regression, kernel)


def ipw_pseudo_features(X, A, Y, V, propensity, kernel) -> PseudoFeatureMatrix:
    return _features("ipw", X, A, Y, V, propensity, None, kernel)


def dm_pseudo_features(X, A, Y, V, regression, kernel) -> PseudoFeatureMatrix:
    return _features("dm", X, A, Y, V, None, regression, kernel)


def naive_pseudo_features(X, A, Y, V, kernel) -> PseudoFeatureMatrix:
    return _features("naive", X, A, Y, V, None, None, kernel)


def mean_and_cov(Z) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased sample covariance of the rows of Z."""
    Z = np.asarray(getattr(Z, "values", Z), dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n = Z.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows for a sample covariance")
    mean = Z.mean(axis=0)
    Zc = Z - mean
    cov = Zc.T @ Zc / (n - 1)
    return mean, 0.5 * (cov + cov.T)


def _ridge_solve(cov, gamma, rhs):
    cov = np.asarray(cov, dtype=float)
    J = cov.shape[0]
    try:
        factor = cho_factor(cov + gamma * np.eye(J), lower=True)
    except LinAlgError as exc:
        raise ValueError("non-PSD covariance input") from exc
    return cho_solve(factor, rhs)


def hotelling_statistic(mean, cov, n: int, gamma: float) -> float:
    """n * mean' (cov + gamma I)^{-1} mean."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    u = _ridge_solve(cov, gamma, mean)
    return max(float(n * mean @ u), 0.0)


def default_gamma(cov, n_test: int) -> float:
    """Scale-relative test ridge: 1e-3 * mean variance / sqrt(n), floored."""
    cov = np.atleast_2d(cov)
    return max(1e-3 * float(np.trace(cov)) / cov.shape[0] / np.sqrt(n_test), 1e-10)


@dataclass
class TestResult:
    statistic: float
    df: int
    p_value: float
    locations: np.ndarray
    n_test: int
    gamma: float
    mean: np.ndarray
    covariance: np.ndarray
    score_kind: str = "dr"
    test_indices: np.ndarray | None = None
    tau: float | None = None
    lengthscale: float | None = None
    location_indices: list | None = None
    diagnostic_only: bool = False
    extra: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def reject(self, alpha: float = 0.05) -> bool:
        return self.p_value <= alpha

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "locations": np.asarray(self.locations).tolist(),
            "location_indices": self.location_indices,
            "n_test": self.n_test,
            "gamma": self.gamma,
            "tau": self.tau,
            "lengthscale": self.lengthscale,
            "mean": np.asarray(self.mean).tolist(),
            "covariance": np.asarray(self.covariance).tolist(),
            "score_kind": self.score_kind,
            "diagnostic_only": self.diagnostic_only,
            "test_indices": None if self.test_indices is None
            else np.asarray(self.test_indices).tolist(),
            **({"extra": self.extra} if self.extra else {}),
        }


def hotelling_test(Z, gamma: float | None = None) -> tuple[float, int, float, np.ndarray, np.ndarray, float]:
    """Hotelling statistic and chi-square p-value from a pseudo-feature matrix."""
    Z = np.asarray(getattr(Z, "values", Z), dtype=float)
    mean, cov = mean_and_cov(Z)
    n = Z.shape[0]
    if gamma is None:
        gamma = default_gamma(cov, n)
    stat = hotelling_statistic(mean, cov, n, gamma)
    df = mean.shape[0]
    return stat, df, chi2_sf(stat, df), mean, cov, gamma


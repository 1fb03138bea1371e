"""Learning witness locations by maximizing the ridge-stabilized power criterion.

The criterion at locations V is ``zbar' (S + tau I)^{-1} zbar`` where zbar
and S are the mean and covariance of the pseudo-features on the training
split. The ``raw_witness`` objective drops the covariance and returns
``||zbar||^2``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .drscore import FeatureMap, _ridge_solve, mean_and_cov
from .kernels import as_points

OBJECTIVES = ("whitened", "raw_witness")
EXHAUSTIVE_LIMIT = 100_000


@dataclass
class LocationSet:
    points: np.ndarray
    provenance: str = "continuous"
    indices: list | None = None

    def __post_init__(self):
        self.points = as_points(self.points)
        if self.points.shape[0] < 1:
            raise ValueError("a location set needs at least one point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite location")
        if self.indices is not None and len(set(self.indices)) != len(self.indices):
            raise ValueError("dictionary indices must be distinct")

    @property
    def J(self) -> int:
        return self.points.shape[0]


@dataclass
class Dictionary:
    candidates: np.ndarray
    source: str = "training outcomes"

    def __post_init__(self):
        self.candidates = as_points(self.candidates)

    @property
    def M(self) -> int:
        return self.candidates.shape[0]

    def subset(self, indices, provenance="dictionary") -> LocationSet:
        indices = [int(i) for i in indices]
        return LocationSet(self.candidates[indices], provenance, indices)


def make_dictionary(Y_train, M: int, rng) -> Dictionary:
    """M training outcomes drawn uniformly without replacement (all if fewer)."""
    Y_train = as_points(Y_train)
    M = min(M, Y_train.shape[0])
    idx = rng.choice(Y_train.shape[0], size=M, replace=False)
    return Dictionary(Y_train[np.sort(idx)])


@dataclass
class CriterionValue:
    value: float
    mean: np.ndarray
    covariance: np.ndarray
    tau: float


def default_tau(cov) -> float:
    """1e-3 times the average feature variance, floored at 1e-8."""
    cov = np.atleast_2d(cov)
    return max(1e-3 * float(np.trace(cov)) / cov.shape[0], 1e-8)


def criterion_from_moments(mean, cov, tau: float, objective: str = "whitened") -> float:
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    mean = np.atleast_1d(mean)
    if objective == "raw_witness":
        return float(mean @ mean)
    if not tau > 0:
        raise ValueError("tau must be positive")
    return max(float(mean @ _ridge_solve(np.atleast_2d(cov), tau, mean)), 0.0)


def _locations_array(V):
    return V.points if isinstance(V, LocationSet) else as_points(V)


def criterion(V, fmap: FeatureMap, tau: float, objective: str = "whitened") -> CriterionValue:
    """Evaluate the learning criterion with pseudo-features from ``fmap``."""
    mean, cov = mean_and_cov(fmap.values(_locations_array(V)))
    return CriterionValue(criterion_from_moments(mean, cov, tau, objective), mean, cov, tau)


def criterion_gradient(V, fmap: FeatureMap, tau: float,
                       objective: str = "whitened") -> np.ndarray:
    """Analytic gradient of the criterion in the locations, shape ``J x d_Y``.

    Only column j of the feature matrix depends on v_j. With
    u = (S + tau I)^{-1} zbar and centered features Zc the derivative in v_j is
    2 u_j (mean(dZ_j) - (Zc u)' dZ_j / (n - 1)).
    """
    pts = _locations_array(V)
    Z = fmap.values(pts)
    n, J = Z.shape
    mean = Z.mean(axis=0)
    grad = np.empty_like(pts)
    if objective == "raw_witness":
        for j in range(J):
            grad[j] = 2.0 * mean[j] * fmap.column_grad(pts, j).mean(axis=0)
        return grad
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    Zc = Z - mean
    cov = Zc.T @ Zc / (n - 1)
    u = _ridge_solve(0.5 * (cov + cov.T), tau, mean)
    proj = Zc @ u
    for j in range(J):
        dZ = fmap.column_grad(pts, j)
        grad[j] = 2.0 * u[j] * (dZ.mean(axis=0) - proj @ dZ / (n - 1))
    return grad


def dictionary_moments(dictionary: Dictionary, fmap: FeatureMap):
    """Mean and covariance of the features at every dictionary candidate.

    Features are columnwise, so the moments of any candidate subset are the
    matching sub-vector and sub-matrix.
    """
    return mean_and_cov(fmap.values(dictionary.candidates))


def _subset_value(mean, cov, idx, tau, objective):
    return criterion_from_moments(mean[idx], cov[np.ix_(idx, idx)], tau, objective)


def greedy_from_moments(mean, cov, J: int, tau: float, objective: str = "whitened"):
    """Forward selection over candidates given their joint moments.

    Returns the selected indices in selection order and the criterion value
    after each step. Ties go to the lowest candidate index.
    """
    mean = np.asarray(mean, dtype=float)
    M = mean.shape[0]
    if J > M:
        raise ValueError(f"cannot select {J} locations from {M} candidates")
    if J < 1:
        raise ValueError("J must be at least 1")
    selected: list[int] = []
    trace = []
    for _ in range(J):
        best, best_val = -1, -math.inf
        for c in range(M):
            if c in selected:
                continue
            val = _subset_value(mean, cov, selected + [c], tau, objective)
            if val > best_val:
                best, best_val = c, val
        selected.append(best)
        trace.append(best_val)
    return selected, trace


def exhaustive_from_moments(mean, cov, J: int, tau: float, objective: str = "whitened"):
    """Exact argmax over all J-subsets; lexicographically first on ties."""
    M = len(mean)
    if J > M:
        raise ValueError(f"cannot select {J} locations from {M} candidates")
    if math.comb(M, J) > EXHAUSTIVE_LIMIT:
        raise ValueError("exhaustive search space too large")
    best, best_val = None, -math.inf
    for combo in itertools.combinations(range(M), J):
        val = _subset_value(mean, cov, list(combo), tau, objective)
        if val > best_val:
            best, best_val = list(combo), val
    return best, best_val


@dataclass
class Selection:
    locations: LocationSet
    tau: float
    trace: list = field(default_factory=list)


def greedy_dictionary_select(dictionary: Dictionary, J: int, fmap: FeatureMap,
                             tau: float | None = None, objective: str = "whitened",
                             exhaustive: bool = False) -> Selection:
    if J > dictionary.M:
        raise ValueError(f"cannot select {J} locations from {dictionary.M} candidates")
    mean, cov = dictionary_moments(dictionary, fmap)
    if tau is None:
        tau = default_tau(cov)
    if exhaustive:
        idx, val = exhaustive_from_moments(mean, cov, J, tau, objective)
        trace = [val]
    else:
        idx, trace = greedy_from_moments(mean, cov, J, tau, objective)
    return Selection(dictionary.subset(idx), tau, trace)


def random_select(dictionary: Dictionary, J: int, rng) -> LocationSet:
    if J > dictionary.M:
        raise ValueError(f"cannot select {J} locations from {dictionary.M} candidates")
    idx = rng.choice(dictionary.M, size=J, replace=False)
    return dictionary.subset(idx, provenance="random")


def gradient_ascent_optimize(V_init, fmap: FeatureMap, tau: float, steps: int,
                             step_size: float, objective: str = "whitened",
                             max_halvings: int = 20, grad_tol: float = 1e-8) -> Selection:
    """Normalized gradient ascent with step halving.

    Each step moves the locations a Frobenius distance of at most
    ``step_size`` along the gradient; a step is accepted only if the
    criterion does not decrease.
    """
    V = _locations_array(V_init).copy()
    value = criterion(V, fmap, tau, objective).value
    trace = [value]
    accepted = 0
    while accepted < steps:
        grad = criterion_gradient(V, fmap, tau, objective)
        norm = float(np.linalg.norm(grad))
        if norm < grad_tol:
            break
        t = step_size
        moved = False
        for _ in range(max_halvings + 1):
            cand = V + t * grad / norm
            cand_val = criterion(cand, fmap, tau, objective).value
            if cand_val >= value:
                V, value, moved = cand, cand_val, True
                break
            t *= 0.5
        if not moved:
            break
        accepted += 1
        trace.append(value)
    return Selection(LocationSet(V, "continuous"), tau, trace)


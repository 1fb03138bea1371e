"""Synthetic confounded designs and the local-alternative generator.

All scenarios share X ~ N(0, I_5), a clipped logistic treatment mechanism
and the nonlinear prognostic function ``g``. Potential outcomes are kept
on the returned object for diagnostics; estimators only see ``.data``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chi2 import chi2_isf, noncentral_chi2_cdf
from .data import Dataset, InputError
from .drscore import FeatureMap, mean_and_cov
from .kernels import GaussianKernel, median_heuristic
from .locations import (Dictionary, LocationSet, default_tau, exhaustive_from_moments,
                        greedy_from_moments, EXHAUSTIVE_LIMIT)
from .nuisance import KnownPropensity, OracleGaussianNuisance

PROPENSITY_COEF = np.array([0.90, -0.75, 0.55, -0.40])
PROPENSITY_CLIP = (0.06, 0.94)
D_X = 5
MEAN_SHIFT = 0.35
VARIANCE_SCALE = 1.45
BUMP_Q = 0.12
TWO_BUMP_P = 0.04
TWO_BUMP_DELTA = 4.0
# outcome lengthscale shared by every location rule in the two-bump study
TWO_BUMP_LENGTHSCALE = 1.75

SCENARIOS = ("sharp_null", "mean_shift", "variance_shift", "localized_bump",
             "two_bump", "two_bump_null", "local_path")


def true_propensity(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    t = X[:, :4] @ PROPENSITY_COEF
    return np.clip(1.0 / (1.0 + np.exp(-t)), *PROPENSITY_CLIP)


def prognostic(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    x1, x2, x3, x4, x5 = (X[:, k] for k in range(5))
    return (0.90 * x1 + 0.60 * np.sin(x2) + 0.35 * (x3**2 - 1.0)
            + 0.25 * x1 * x4 - 0.20 * np.cos(x5))


def known_propensity() -> KnownPropensity:
    return KnownPropensity(true_propensity)


def two_bump_directions(d_y: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors e_1 and e_{ceil(d/2)+1}: sparse with disjoint supports."""
    if d_y < 2:
        raise ValueError("two-bump design needs d_Y >= 2")
    v1 = np.zeros(d_y)
    v2 = np.zeros(d_y)
    v1[0] = 1.0
    v2[math.ceil(d_y / 2)] = 1.0
    return v1, v2


@dataclass
class SimulatedData:
    data: Dataset
    y0: np.ndarray
    y1: np.ndarray
    propensity: np.ndarray
    scenario: str
    shift: float = 0.0


def _bump_labels(rng, n):
    # 0: no bump, 1: region one, 2: region two
    u = rng.random(n)
    return np.where(u < TWO_BUMP_P, 1, np.where(u < 2 * TWO_BUMP_P, 2, 0))


def gen_scenario(name: str, n: int, rng, d_y: int = 5, h: float = 0.0,
                 noise: float = 1.0) -> SimulatedData:
    """Draw n units from a named scenario.

    ``d_y`` applies to the two-bump designs, ``h`` to the local path, whose
    treated arm is shifted by ``h / sqrt(n)``.
    """
    if name not in SCENARIOS:
        raise InputError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    if n < 1:
        raise InputError("n must be positive")
    X = rng.standard_normal((n, D_X))
    p1 = true_propensity(X)
    A = (rng.random(n) < p1).astype(int)
    g = prognostic(X)
    shift = 0.0
    if name in ("two_bump", "two_bump_null"):
        # the prognostic signal is spread evenly over coordinates with unit norm
        base = g[:, None] * np.full(d_y, 1.0 / math.sqrt(d_y))
        e0 = noise * rng.standard_normal((n, d_y))
        e1 = noise * rng.standard_normal((n, d_y))
        y0 = base + e0
        y1 = base + e1
        if name == "two_bump":
            v1, v2 = two_bump_directions(d_y)
            b0 = _bump_labels(rng, n)
            b1 = _bump_labels(rng, n)
            y0 = y0 - TWO_BUMP_DELTA * (np.outer(b0 == 1, v1) + np.outer(b0 == 2, v2))
            y1 = y1 + TWO_BUMP_DELTA * (np.outer(b1 == 1, v1) + np.outer(b1 == 2, v2))
        else:
            y1 = y0.copy()
    else:
        e0 = rng.standard_normal(n)
        e1 = rng.standard_normal(n)
        y0 = g + e0
        if name == "sharp_null":
            y1 = y0.copy()
        elif name == "mean_shift":
            y1 = g + e1 + MEAN_SHIFT
        elif name == "variance_shift":
            y1 = g + VARIANCE_SCALE * e1
        elif name == "localized_bump":
            b = (rng.random(n) < BUMP_Q).astype(float)
            y1 = g + e1 + (b - BUMP_Q) / math.sqrt(BUMP_Q * (1.0 - BUMP_Q))
        else:  # local_path
            shift = h / math.sqrt(n)
            y1 = g + e1 + shift
        y0, y1 = y0[:, None], y1[:, None]
    Y = np.where(A[:, None] == 1, y1, y0)
    return SimulatedData(Dataset(X, A, Y), y0, y1, p1, name, shift)


@dataclass(frozen=True)
class LocalPathSpec:
    """Frozen pilot quantities for the local-alternative experiment."""

    locations: tuple = (-2.6752, 3.9031)
    lengthscale: float = 1.4289
    noncentrality: float = 0.1383
    sigma: float = 1.0

    @property
    def J(self) -> int:
        return len(self.locations)

    def oracle(self, n: int, h: float) -> OracleGaussianNuisance:
        return OracleGaussianNuisance(prognostic, 0.0, h / math.sqrt(n), self.sigma,
                                      self.lengthscale)

    def kernel(self) -> GaussianKernel:
        return GaussianKernel(self.lengthscale)


def theory_curve(spec: LocalPathSpec, h_grid, alpha: float = 0.05) -> list[float]:
    """Asymptotic rejection probability 1 - F_{chi2_J(h^2 lambda)}(q_{1-alpha})."""
    q = chi2_isf(alpha, spec.J)
    return [1.0 - noncentral_chi2_cdf(q, spec.J, h * h * spec.noncentrality)
            for h in h_grid]


@dataclass
class PilotResult:
    spec: LocalPathSpec
    locations: LocationSet
    drift: np.ndarray
    covariance: np.ndarray
    tau: float
    criterion: float


def pilot_localize(n_pilot: int, M: int, J: int, rng, tau: float | None = None,
                   lengthscale: float | None = None, sigma: float = 1.0,
                   exhaustive: bool = True) -> PilotResult:
    """Choose J locations for the local path on a large null pilot sample.

    Locations maximize drift' (Sigma + tau I)^{-1} drift over a dictionary
    of M pilot outcomes, where drift is the derivative of the witness in the
    treated-arm shift and Sigma the covariance of the oracle DR features.
    The reported noncentrality is the unridged drift' Sigma^{-1} drift.
    """
    sim = gen_scenario("local_path", n_pilot, rng, h=0.0)
    data = sim.data
    if lengthscale is None:
        lengthscale = median_heuristic(data.Y, seed=int(rng.integers(2**31)))
    kernel = GaussianKernel(lengthscale)
    oracle = OracleGaussianNuisance(prognostic, 0.0, 0.0, sigma, lengthscale)
    idx = rng.choice(n_pilot, size=min(M, n_pilot), replace=False)
    dictionary = Dictionary(data.Y[np.sort(idx)], source="pilot outcomes")
    fmap = FeatureMap(data.X, data.A, data.Y, known_propensity(), oracle, kernel, "dr")
    _, cov = mean_and_cov(fmap.values(dictionary.candidates))
    # derivative of E[m_1(X; v)] in the treated shift at zero
    gx = prognostic(data.X)[:, None]
    c = dictionary.candidates[:, 0][None, :]
    s2 = lengthscale**2 + sigma**2
    drift = np.mean(oracle.value(1, gx, c) * (c - gx) / s2, axis=0)
    if tau is None:
        tau = default_tau(cov)
    if exhaustive and math.comb(dictionary.M, J) <= EXHAUSTIVE_LIMIT:
        sel, value = exhaustive_from_moments(drift, cov, J, tau)
    else:
        sel, trace = greedy_from_moments(drift, cov, J, tau)
        value = trace[-1]
    loc = dictionary.subset(sel, provenance="pilot")
    eta = drift[sel]
    sub = cov[np.ix_(sel, sel)]
    lam = float(eta @ np.linalg.solve(sub, eta))
    spec = LocalPathSpec(tuple(float(v) for v in loc.points[:, 0]), float(lengthscale),
                         lam, sigma)
    return PilotResult(spec, loc, eta, sub, tau, value)

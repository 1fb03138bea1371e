"""Central and noncentral chi-square distribution functions.

The regularized incomplete gamma function uses the power series below
``a + 1`` and a modified Lentz continued fraction above it.
"""

from __future__ import annotations

import math

EPS = 1e-16
TINY = 1e-300
MAX_ITER = 10_000


def _gamma_series(a: float, x: float) -> float:
    # lower regularized P(a, x), valid for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # upper regularized Q(a, x), valid for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / TINY
    d = 1.0 / b
    h = d
    for i in range(1, MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < TINY:
            d = TINY
        c = b + an / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise ValueError("shape must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x)."""
    if a <= 0:
        raise ValueError("shape must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def _check_df(df) -> float:
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    return float(df)


def chi2_cdf(x: float, df: int) -> float:
    df = _check_df(df)
    if x <= 0:
        return 0.0
    return gammainc_lower(0.5 * df, 0.5 * x)


def chi2_sf(x: float, df: int) -> float:
    """Upper tail probability of the chi-square law with ``df`` degrees of freedom."""
    df = _check_df(df)
    if x <= 0:
        return 1.0
    return gammainc_upper(0.5 * df, 0.5 * x)


def chi2_isf(p: float, df: int) -> float:
    """Quantile x with chi2_sf(x, df) = p, by bracketed bisection."""
    df = _check_df(df)
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    if p == 1.0:
        return 0.0
    if df == 2:
        return -2.0 * math.log(p)
    lo, hi = 0.0, max(1.0, df)
    while chi2_sf(hi, df) > p:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_sf(mid, df) > p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def noncentral_chi2_cdf(x: float, df: int, nc: float, tol: float = 1e-14) -> float:
    """CDF of the noncentral chi-square as a Poisson mixture of central laws.

    Terms are summed until the remaining Poisson mass is provably below ``tol``.
    """
    df = _check_df(df)
    if nc < 0:
        raise ValueError("noncentrality must be nonnegative")
    if x <= 0:
        return 0.0
    if nc == 0:
        return chi2_cdf(x, df)
    lam = 0.5 * nc
    total = 0.0
    k = 0
    while True:
        log_w = -lam + k * math.log(lam) - math.lgamma(k + 1.0)
        w = math.exp(log_w)
        total += w * gammainc_lower(0.5 * df + k, 0.5 * x)
        ratio = lam / (k + 2.0)
        # tail after term k is at most w * r / (1 - r) with r = lam / (k + 2)
        if k + 2.0 > lam and w * (lam / (k + 1.0)) / (1.0 - ratio) < tol:
            break
        k += 1
        if k > MAX_ITER:
            break
    return min(total, 1.0)


def noncentral_chi2_sf(x: float, df: int, nc: float) -> float:
    return 1.0 - noncentral_chi2_cdf(x, df, nc)

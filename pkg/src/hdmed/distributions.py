"""Central and noncentral chi-square distribution functions.

The central CDF is the regularized lower incomplete gamma function. The
noncentral CDF is the Poisson mixture of central CDFs

    F(x; k, nc) = sum_j Pois(j; nc/2) * P(chi2_{k+2j} <= x),

summed outward from the Poisson mode so that the dominant terms are added
first and the series is cut once both tails fall below ``1e-14``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

_TERM_TOL = 1e-14


def _central_cdf(x: float, df: float) -> float:
    return float(special.gammainc(0.5 * df, 0.5 * x))


def _central_sf(x: float, df: float) -> float:
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def _poisson_mixture(x: float, df: float, ncp: float, tail: bool) -> float:
    mu = 0.5 * ncp
    if mu == 0.0:  # ncp underflowed
        return _central_sf(x, df) if tail else _central_cdf(x, df)
    j0 = int(math.floor(mu))
    cap = int(10 * (df + ncp)) + 10
    f = _central_sf if tail else _central_cdf

    def weight(j: int) -> float:
        return math.exp(-mu + j * math.log(mu) - math.lgamma(j + 1))

    total = 0.0
    # upward from the mode
    j = j0
    while j <= j0 + cap:
        w = weight(j)
        term = w * f(x, df + 2 * j)
        total += term
        if w < _TERM_TOL and term < _TERM_TOL:
            break
        j += 1
    # downward from the mode
    j = j0 - 1
    while j >= 0:
        w = weight(j)
        term = w * f(x, df + 2 * j)
        total += term
        if w < _TERM_TOL and term < _TERM_TOL:
            break
        j -= 1
    return min(max(total, 0.0), 1.0)


def chi2_cdf(x: float, df: float, ncp: float = 0.0) -> float:
    """P(chi2_df(ncp) <= x). Returns 0 for x <= 0."""
    if ncp < 0:
        raise ValueError("noncentrality must be nonnegative")
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if not np.isfinite(x):
        return 1.0 if x > 0 else 0.0
    if x <= 0:
        return 0.0
    if ncp == 0:
        return _central_cdf(x, df)
    return _poisson_mixture(x, df, ncp, tail=False)


def chi2_sf(x: float, df: float, ncp: float = 0.0) -> float:
    """Upper tail P(chi2_df(ncp) > x), computed without cancellation."""
    if ncp < 0:
        raise ValueError("noncentrality must be nonnegative")
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if x <= 0:
        return 1.0
    if not np.isfinite(x):
        return 0.0
    if ncp == 0:
        return _central_sf(x, df)
    return _poisson_mixture(x, df, ncp, tail=True)


def chi2_ppf(prob: float, df: float) -> float:
    """Central chi-square quantile."""
    return float(2.0 * special.gammaincinv(0.5 * df, prob))


def chi2_power(df: int, ncp: float, level: float) -> float:
    """Rejection probability of a level-``level`` chi-square test under ``ncp``."""
    if ncp == 0:
        return float(level)
    return chi2_sf(chi2_ppf(1.0 - level, df), df, ncp)

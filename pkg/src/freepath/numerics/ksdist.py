"""Asymptotic Kolmogorov distribution (two-sided KS statistic limit law)."""

from __future__ import annotations

import math


def kolmogorov_sf(x: float, tol: float = 1e-10) -> float:
    """P(K > x) = 2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2), truncated at tol.

    The series alternates with decreasing terms for x > 0, so the truncation
    error is bounded by the first dropped term.
    """
    if x <= 0.01:
        return 1.0
    total = 0.0
    sign = 1.0
    for k in range(1, 1000):
        term = math.exp(-2.0 * k * k * x * x)
        total += sign * term
        if term < 0.5 * tol:
            break
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def kolmogorov_cdf(x: float, tol: float = 1e-10) -> float:
    return 1.0 - kolmogorov_sf(x, tol)

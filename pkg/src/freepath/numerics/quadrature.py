"""Adaptive quadrature: recursive Simpson with a tanh-sinh route for
endpoint singularities.

Integrands may blow up at interval endpoints no worse than
``(x - a)**(-1 + eps)``; interior singularities are not supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable


@dataclass
class QuadratureResult:
    value: float
    error: float
    subdivisions: int
    converged: bool


_MAX_DEPTH = 48
_MAX_EVALS = 20_000


def _simpson(fa, fm, fb, h):
    return h * (fa + 4.0 * fm + fb) / 6.0


def _adaptive_simpson(f, a, fa, b, fb, m, fm, whole, tol, rel_tol, depth, counter):
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = f(lm)
    frm = f(rm)
    left = _simpson(fa, flm, fm, m - a)
    right = _simpson(fm, frm, fb, b - m)
    counter[0] += 1
    delta = left + right - whole
    if not math.isfinite(delta):
        counter[1] = False
        return left + right, abs(whole)
    if depth >= _MAX_DEPTH or counter[0] >= _MAX_EVALS:
        counter[1] = False
        return left + right, abs(delta)
    if abs(delta) <= 15.0 * max(tol, rel_tol * abs(left + right)):
        # Richardson extrapolation of the two half-interval estimates
        return left + right + delta / 15.0, abs(delta) / 15.0
    lv, le = _adaptive_simpson(f, a, fa, m, fm, lm, flm, left, 0.5 * tol,
                               rel_tol, depth + 1, counter)
    rv, re = _adaptive_simpson(f, m, fm, b, fb, rm, frm, right, 0.5 * tol,
                               rel_tol, depth + 1, counter)
    return lv + rv, le + re


def integrate_simpson(f: Callable[[float], float], a: float, b: float,
                      tol: float = 1e-10, rel_tol: float = 0.0) -> QuadratureResult:
    """Recursive adaptive Simpson on [a, b]; f must be finite on the closure."""
    if a == b:
        return QuadratureResult(0.0, 0.0, 0, True)
    m = 0.5 * (a + b)
    fa, fm, fb = f(a), f(m), f(b)
    if not (math.isfinite(fa) and math.isfinite(fm) and math.isfinite(fb)):
        raise ValueError("integrand not finite on [a, b]; use integrate_adaptive")
    whole = _simpson(fa, fm, fb, b - a)
    counter = [1, True]
    value, err = _adaptive_simpson(f, a, fa, b, fb, m, fm, whole, tol, rel_tol,
                                   0, counter)
    bound = max(tol, rel_tol * abs(value), 1e-300)
    return QuadratureResult(value, err, counter[0], counter[1] and err <= bound)


def integrate_tanh_sinh(f: Callable[[float], float], a: float, b: float,
                        tol: float = 1e-10, max_level: int = 12) -> QuadratureResult:
    """Tanh-sinh (double exponential) quadrature on (a, b).

    Endpoints are never evaluated; abscissas that collide with an endpoint in
    floating point are skipped (their true weight is below tolerance by then).
    """
    if a == b:
        return QuadratureResult(0.0, 0.0, 0, True)
    c = 0.5 * (a + b)
    s = 0.5 * (b - a)
    half_pi = 0.5 * math.pi

    def node(t):
        # returns (x, w); x built from the exact distance to the endpoint
        u = half_pi * math.sinh(t)
        w = s * half_pi * math.cosh(t) / math.cosh(u) ** 2
        # distance from the nearer endpoint: s * (1 - |tanh(u)|)
        e = math.exp(-2.0 * abs(u))
        dist = s * 2.0 * e / (1.0 + e)
        if t >= 0:
            x = b - dist
        else:
            x = a + dist
        return x, w

    def term(t):
        x, w = node(t)
        if x <= a or x >= b:
            return 0.0
        v = f(x)
        if not math.isfinite(v):
            return 0.0
        return w * v

    t_max = 4.0
    h = 1.0
    total = h * term(0.0)
    evals = 1
    k = 1
    while k * h <= t_max:
        total += h * (term(k * h) + term(-k * h))
        evals += 2
        k += 1
    prev = total
    converged = False
    for level in range(1, max_level + 1):
        h *= 0.5
        add = 0.0
        t = h
        while t <= t_max:
            add += term(t) + term(-t)
            evals += 2
            t += 2.0 * h
        total = 0.5 * prev + h * add
        if level >= 3 and abs(total - prev) <= max(tol, 1e-15 * abs(total)):
            converged = True
            prev_err = abs(total - prev)
            return QuadratureResult(total, prev_err, evals, True)
        prev = total
    return QuadratureResult(total, abs(total - prev), evals, converged)


def integrate_adaptive(f: Callable[[float], float], a: float, b: float,
                       tol: float = 1e-10, rel_tol: float = 0.0) -> QuadratureResult:
    """Integrate f over [a, b], tolerating endpoint singularities.

    Finite, well-behaved endpoints go through adaptive Simpson; otherwise the
    tanh-sinh rule is used.  ``b < a`` integrates with the usual sign flip.
    """
    if a == b:
        return QuadratureResult(0.0, 0.0, 0, True)
    if b < a:
        res = integrate_adaptive(f, b, a, tol, rel_tol)
        return QuadratureResult(-res.value, res.error, res.subdivisions, res.converged)
    try:
        fa, fb = f(a), f(b)
        endpoint_ok = math.isfinite(fa) and math.isfinite(fb)
    except (ZeroDivisionError, OverflowError, ValueError):
        endpoint_ok = False
    if endpoint_ok:
        res = integrate_simpson(f, a, b, tol, rel_tol)
        if res.converged:
            return res
    return integrate_tanh_sinh(f, a, b, tol)

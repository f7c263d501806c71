"""Bracketed scalar root finding: bisection narrowing plus a safeguarded
Newton polish with a finite-difference derivative."""

from __future__ import annotations

import math
from typing import Callable


def bracket_root(f: Callable[[float], float], lo: float, hi: float,
                 xtol: float = 1e-12, max_iter: int = 200) -> float:
    """Root of f in [lo, hi]; f(lo) and f(hi) must have opposite signs."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if math.copysign(1.0, flo) == math.copysign(1.0, fhi):
        raise ValueError("no sign change on bracket [%g, %g]" % (lo, hi))

    # bisection until the bracket is narrow enough for Newton to be safe
    coarse = max(1e-6 * max(1.0, abs(lo), abs(hi)), 8.0 * xtol)
    for _ in range(max_iter):
        if hi - lo <= coarse:
            break
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if math.copysign(1.0, fm) == math.copysign(1.0, flo):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm

    x = 0.5 * (lo + hi)
    fx = f(x)
    for _ in range(max_iter):
        if hi - lo <= xtol:
            break
        step_h = max(1e-7 * max(1.0, abs(x)), xtol)
        deriv = (f(x + step_h) - f(x - step_h)) / (2.0 * step_h)
        newton_ok = deriv != 0.0 and math.isfinite(deriv)
        if newton_ok:
            x_new = x - fx / deriv
            newton_ok = lo < x_new < hi
        if not newton_ok:
            x_new = 0.5 * (lo + hi)
        f_new = f(x_new)
        if f_new == 0.0:
            return x_new
        if math.copysign(1.0, f_new) == math.copysign(1.0, flo):
            lo, flo = x_new, f_new
        else:
            hi, fhi = x_new, f_new
        if abs(x_new - x) <= xtol:
            return x_new
        x, fx = x_new, f_new
    return 0.5 * (lo + hi)

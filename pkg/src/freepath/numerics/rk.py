"""Adaptive Dormand-Prince RK5(4) stepping with quartic dense output.

The core operates on a batch axis: each row of the state array is an
independent ODE instance with its own time, step size, and accept/reject
decision, advanced in lockstep by vectorized sweeps.  The same tableau backs
the single-system ``rk_step_dense`` convenience used for generic ODE work.

Events are located by bisection on the dense interpolant (no derivative
polish), which stays robust where the event function's slope vanishes.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

# Dormand-Prince 5(4) tableau.  The propagated solution is 5th order; E gives
# the embedded error coefficients (applied to the 7 stages including FSAL).
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920,
              17253 / 339200, -22 / 525, 1 / 40])
# Dense-output polynomial matrix (7 stages x 4 powers of theta); result is
# y(t0 + theta*h) = y0 + h * (K^T P) . [theta, theta^2, theta^3, theta^4].
P = np.array([
    [1.0, -2.8535800653862835, 3.0717434641059005, -1.1270175653862835],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 4.0231333792303046, -6.2493215652889997, 2.675424484351598],
    [0.0, -3.7324019615885042, 10.068970589843675, -5.6855269615885042],
    [0.0, 2.5548038301849423, -6.3991123773510168, 3.5219323679207912],
    [0.0, -1.3744241142186024, 3.2726577522467291, -1.7672812570757455],
    [0.0, 1.3824689317781436, -3.7649378635562871, 2.3824689317781438],
])

N_STAGES = 6
ERROR_EXPONENT = -0.2  # 1/(order of the error estimator + 1)
SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


def _rms(x, axis=-1):
    return np.sqrt(np.mean(np.square(x), axis=axis))


def initial_step_size(f, t, y, k1, rtol, atol):
    """Hairer-style starting step for each batch row.

    f maps (t (B,), y (B, n)) -> (B, n); k1 = f(t, y).
    """
    scale = atol + rtol * np.abs(y)
    d0 = _rms(y / scale)
    d1 = _rms(k1 / scale)
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    y1 = y + h0[:, None] * k1
    f1 = f(t + h0, y1)
    d2 = _rms((f1 - k1) / scale) / h0
    dm = np.maximum(d1, d2)
    h1 = np.where(dm <= 1e-15, np.maximum(1e-6, h0 * 1e-3),
                  (0.01 / np.maximum(dm, 1e-300)) ** 0.2)
    return np.minimum(100.0 * h0, h1)


class AdaptiveBatch:
    """Batch of independent RK5(4) integrations advanced one sweep at a time.

    Rows advance with individual step sizes; a sweep attempts one step per
    active row and either accepts it (row time advances, FSAL stage reused)
    or rejects it (step size shrinks, state unchanged).  ``post_check`` lets
    the caller veto otherwise-accepted steps (e.g. on invariant drift); vetoed
    rows retry at half the step.
    """

    def __init__(self, f, t0, y0, rtol=1e-10, atol=1e-10,
                 post_check: Callable | None = None, max_step=np.inf):
        self.f = f
        self.t = np.array(t0, dtype=float, copy=True)
        self.y = np.array(y0, dtype=float, copy=True)
        if self.y.ndim != 2:
            raise ValueError("y0 must have shape (batch, n)")
        self.n_rows, self.n_dim = self.y.shape
        self.rtol = rtol
        self.atol = atol
        self.post_check = post_check
        self.max_step = max_step
        self.k1 = f(self.t, self.y)
        self.h = np.minimum(initial_step_size(f, self.t, self.y, self.k1, rtol, atol),
                            max_step)
        self.h_cap = np.full(self.n_rows, np.inf)
        self.underflow = np.zeros(self.n_rows, dtype=bool)
        self.n_evals = self.n_rows * 2

    def reset_rows(self, rows, t_new, y_new, h_new=None):
        """Reinitialize selected rows (after an event relocated their state)."""
        self.t[rows] = t_new
        self.y[rows] = y_new
        self.k1[rows] = self.f(self.t[rows], self.y[rows])
        if h_new is not None:
            self.h[rows] = h_new
        self.underflow[rows] = False

    def sweep(self, rows):
        """Attempt one step on the given row indices.

        Returns (accepted_rows, t_old, y_old, h_used, K) where the arrays are
        aligned with accepted_rows and K has shape (m, 7, n) for dense output.
        """
        if rows.size == 0:
            empty = np.empty(0, dtype=int)
            return empty, np.empty(0), np.empty((0, self.n_dim)), np.empty(0), \
                np.empty((0, 7, self.n_dim))
        t0 = self.t[rows]
        y0 = self.y[rows]
        h = np.minimum(self.h[rows], self.h_cap[rows])
        h = np.minimum(h, self.max_step)
        k = np.empty((rows.size, N_STAGES + 1, self.n_dim))
        k[:, 0] = self.k1[rows]
        for s in range(1, N_STAGES):
            dy = np.einsum("j,mjn->mn", A[s, :s], k[:, :s]) * h[:, None]
            k[:, s] = self.f(t0 + C[s] * h, y0 + dy)
        y_new = y0 + h[:, None] * np.einsum("j,mjn->mn", B, k[:, :N_STAGES])
        t_new = t0 + h
        k[:, N_STAGES] = self.f(t_new, y_new)
        self.n_evals += rows.size * N_STAGES

        scale = self.atol + self.rtol * np.maximum(np.abs(y0), np.abs(y_new))
        err = _rms(np.einsum("j,mjn->mn", E, k) * h[:, None] / scale)
        accept = err <= 1.0

        with np.errstate(divide="ignore", over="ignore"):
            factor = SAFETY * err ** ERROR_EXPONENT
        factor = np.where(err == 0.0, MAX_FACTOR, factor)
        factor = np.clip(factor, MIN_FACTOR, MAX_FACTOR)
        factor = np.where(accept, factor, np.minimum(factor, 1.0))

        if self.post_check is not None and np.any(accept):
            acc_idx = np.nonzero(accept)[0]
            ok = self.post_check(rows[acc_idx], y0[acc_idx], y_new[acc_idx])
            bad = acc_idx[~ok]
            accept[bad] = False
            factor[bad] = 0.5

        self.h[rows] = h * factor
        tiny = 1e-14 * np.maximum(1.0, np.abs(t0))
        self.underflow[rows] = self.h[rows] < tiny

        acc = np.nonzero(accept)[0]
        out_rows = rows[acc]
        self.t[out_rows] = t_new[acc]
        self.y[out_rows] = y_new[acc]
        self.k1[out_rows] = k[acc, N_STAGES]
        return out_rows, t0[acc], y0[acc], h[acc], k[acc]


def dense_coefficients(h, K):
    """Per-row dense output coefficient stack Q (m, n, 4) from stages K."""
    return np.einsum("msn,sp->mnp", K, P)


def dense_eval(y_old, h, Q, theta):
    """Evaluate the quartic interpolant at per-row fractions theta in [0, 1]."""
    theta = np.asarray(theta, dtype=float)
    powers = np.stack([theta, theta**2, theta**3, theta**4], axis=-1)
    return y_old + h[:, None] * np.einsum("mnp,mp->mn", Q, powers)


def dense_eval_scalar(y0_comp, h, q_comp, theta):
    """Evaluate one interpolated component: y0 + h * q . [th..th^4]."""
    q1, q2, q3, q4 = (q_comp[:, i] for i in range(4))
    return y0_comp + h * theta * (q1 + theta * (q2 + theta * (q3 + theta * q4)))


def bisect_scalar(y0_comp, h, q_comp, target, theta_lo, theta_hi, tol_t):
    """Bisection for a scalar interpolated component crossing its target.

    The component must bracket the target between theta_lo and theta_hi for
    every row; returns theta at the crossing to time tolerance tol_t.  The
    iteration count is fixed up front from the widest row, so the sweep is
    branch-free (sign reference taken once at theta_lo).
    """
    lo = np.array(theta_lo, dtype=float, copy=True)
    hi = np.array(theta_hi, dtype=float, copy=True)
    q1, q2, q3, q4 = (q_comp[:, i] for i in range(4))
    base = y0_comp - target

    def val(th):
        return base + h * th * (q1 + th * (q2 + th * (q3 + th * q4)))

    span = float(np.max((hi - lo) * h))
    if span <= tol_t:
        return 0.5 * (lo + hi)
    n_iter = min(64, int(math.ceil(math.log2(span / tol_t))) + 1)
    sign_lo = val(lo) > 0.0
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        same = (val(mid) > 0.0) == sign_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def bisect_dense(value_fn, y_old, h, Q, theta_lo, theta_hi, tol_t):
    """Bisection for value_fn(states) = 0 between theta_lo and theta_hi.

    value_fn maps states (m, n) -> (m,) and must bracket a sign change on the
    given interval for every row.  Returns theta at the crossing, located to
    an absolute time tolerance tol_t (per row, in t units: tol_theta*h).
    """
    lo = np.array(theta_lo, dtype=float, copy=True)
    hi = np.array(theta_hi, dtype=float, copy=True)
    f_lo = value_fn(dense_eval(y_old, h, Q, lo))
    tol_theta = tol_t / np.maximum(h, 1e-300)
    for _ in range(64):
        if np.all(hi - lo <= tol_theta):
            break
        mid = 0.5 * (lo + hi)
        f_mid = value_fn(dense_eval(y_old, h, Q, mid))
        same = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(same, mid, lo)
        f_lo = np.where(same, f_mid, f_lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


class DenseInterpolant:
    """Dense output for a single accepted step of a single system."""

    order = 4

    def __init__(self, t_old, t_new, y_old, Q):
        self.t_old = float(t_old)
        self.t_new = float(t_new)
        self.y_old = np.asarray(y_old)
        self.Q = np.asarray(Q)  # (n, 4)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        h = self.t_new - self.t_old
        theta = (t - self.t_old) / h
        powers = np.stack([theta, theta**2, theta**3, theta**4], axis=-1)
        return self.y_old + h * powers @ self.Q.T


def rk_step_dense(f, y, t, dt_suggest, rtol=1e-10, atol=1e-10, max_step=np.inf):
    """One accepted adaptive step of a single ODE system.

    f maps (t, y (n,)) -> (n,).  Returns (y_new, interpolant, dt_next); the
    interpolant covers [t, t + h_used] with the method-matched quartic.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))

    def fb(tb, yb):
        return np.atleast_2d(f(tb[0], yb[0]))

    batch = AdaptiveBatch(fb, np.array([t]), y[None, :], rtol, atol, max_step=max_step)
    batch.h[:] = min(dt_suggest, max_step)
    rows = np.array([0])
    for _ in range(64):
        acc, t_old, y_old, h_used, K = batch.sweep(rows)
        if acc.size:
            Q = dense_coefficients(h_used, K)[0]
            interp = DenseInterpolant(t_old[0], t_old[0] + h_used[0], y_old[0], Q)
            return batch.y[0].copy(), interp, float(batch.h[0])
        if batch.underflow[0]:
            raise RuntimeError("step size underflow at t=%g" % batch.t[0])
    raise RuntimeError("no accepted step after 64 attempts")

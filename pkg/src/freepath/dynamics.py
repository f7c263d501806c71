"""Deterministic between-collision motion: m y'' = -grad U_n(y).

Flights are integrated in Cartesian coordinates with the cumulative
reflection hazard appended as an extra state coordinate, so the hazard sees
exactly the integrated trajectory.  Conserved quantities (energy on the
scaled surface, angular momentum magnitude) are monitored per flight; a step
whose energy drift exceeds 10x the relative tolerance is rejected and
retried at half size.

A trajectory that reaches the origin radially is continued through it with
continuous momentum (position reflects, velocity is kept), matching the
odd-extension y(t) = -y(2T - t); the crossing time and hazard across the
excluded ball are added by quadrature.  Singular potentials where the limit
velocity does not exist abort with an explicit error instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .errors import IntegrationError, ModelError, SingularInfallError, SlowRegionError
from .model import ModelConfig, scaled_speed
from .numerics import rk


class FlightStatus(IntEnum):
    OK = 0
    SLOW_REGION = 1
    SINGULAR_INFALL = 2
    STEP_UNDERFLOW = 3


def angular_momentum_norm(x, v):
    """|x ^ v| (2-form norm) for any dimension; matches |x x v| at d=2,3."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    w = x[..., :, None] * v[..., None, :] - x[..., None, :] * v[..., :, None]
    return np.sqrt(0.5 * np.sum(w * w, axis=(-2, -1)))


@dataclass(frozen=True)
class PhaseState:
    """Position/velocity on the scaled energy surface plus cached invariants."""

    position: np.ndarray
    velocity: np.ndarray
    radius: float
    angular_momentum: float
    energy: float  # instantaneous m|v|^2/2 + U_n(r)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))


def phase_state(config: ModelConfig, x, v) -> PhaseState:
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    r = float(np.linalg.norm(x))
    energy = 0.5 * config.mass * float(v @ v) + float(config.u_n(r))
    return PhaseState(x, v, r, float(angular_momentum_norm(x, v)), energy)


def launch_state(x, u, config: ModelConfig) -> PhaseState:
    """State at position x moving along unit direction u with speed v_n(|x|)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-12:
        raise ModelError("direction must be a unit vector")
    r = float(np.linalg.norm(x))
    if not (config.domain.lower < r < config.domain.upper):
        raise ModelError("launch radius %g outside the open domain" % r)
    vn = scaled_speed(config, r)
    return phase_state(config, x, vn * u)


def make_flight_rhs(config: ModelConfig):
    """RHS over batched states [x (d), v (d), F]; F' = g_n(r) |v|."""
    d = config.dimension
    mass = config.mass
    sqrt_n = math.sqrt(config.scaling_n)
    du = config.potential.derivative
    g = config.density.evaluator

    def f(t, y):
        x = y[:, :d]
        v = y[:, d:2 * d]
        r = np.maximum(np.sqrt(np.einsum("ij,ij->i", x, x)), 1e-300)
        accel = -(np.asarray(du(r), dtype=float) / (sqrt_n * mass * r))[:, None] * x
        out = np.empty_like(y)
        out[:, :d] = v
        out[:, d:2 * d] = accel
        out[:, 2 * d] = sqrt_n * np.asarray(g(r), dtype=float) * \
            np.sqrt(np.einsum("ij,ij->i", v, v))
        return out

    return f


@dataclass
class PathSegment:
    """Dense record of one free flight (possibly spanning origin crossings).

    Steps are stored as (t0, t1, h, y0, Q): the quartic interpolant of the
    integrator evaluated at theta = (t - t0)/h, valid for t in [t0, t1]
    (t1 - t0 < h when an event truncated the step).  Origin-crossing bridges
    appear as linear steps.
    """

    config: ModelConfig
    t_starts: np.ndarray
    t_ends: np.ndarray
    h_full: np.ndarray
    y_starts: np.ndarray          # (K, 2d+1)
    dense_q: np.ndarray           # (K, 2d+1, 4)
    end_state: np.ndarray         # (2d+1,)
    duration: float
    energy_drift: float
    angmom_drift: float
    status: FlightStatus
    interpolation_order: int = 4
    origin_crossings: list = field(default_factory=list)

    @property
    def dim(self):
        return self.config.dimension

    def launch(self) -> PhaseState:
        d = self.dim
        return phase_state(self.config, self.y_starts[0, :d], self.y_starts[0, d:2 * d])

    def state_at(self, t):
        """Full state vector(s) [x, v, F] at time(s) t within the flight."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t_arr < -1e-12) or np.any(t_arr > self.duration * (1 + 1e-12) + 1e-300):
            raise ValueError("time outside the flight [0, %g]" % self.duration)
        t_arr = np.clip(t_arr, 0.0, self.duration)
        idx = np.clip(np.searchsorted(self.t_starts, t_arr, side="right") - 1, 0,
                      len(self.t_starts) - 1)
        theta = (t_arr - self.t_starts[idx]) / self.h_full[idx]
        out = rk.dense_eval(self.y_starts[idx], self.h_full[idx], self.dense_q[idx], theta)
        return out if np.ndim(t) else out[0]

    def phase_at(self, t) -> PhaseState:
        d = self.dim
        s = self.state_at(t)
        return phase_state(self.config, s[:d], s[d:2 * d])

    def positions_at(self, t):
        return self.state_at(t)[..., :self.dim]

    def hazard_at(self, t):
        return self.state_at(t)[..., 2 * self.dim]

    def sample_times(self, n: int = 256):
        return np.linspace(0.0, self.duration, n)

    def to_csv(self, path, n_samples: int = 256):
        """Columns t, x_1..x_d, v_1..v_d, r, energy_err, L_err."""
        d = self.dim
        ts = self.sample_times(n_samples)
        states = self.state_at(ts)
        x = states[:, :d]
        v = states[:, d:2 * d]
        r = np.linalg.norm(x, axis=1)
        launch = self.launch()
        e_scale = max(abs(launch.energy), 0.5 * self.config.mass * launch.speed ** 2, 1e-300)
        e_inst = 0.5 * self.config.mass * np.einsum("ij,ij->i", v, v) + \
            np.asarray(self.config.u_n(r), dtype=float)
        e_err = (e_inst - launch.energy) / e_scale
        l_scale = max(launch.angular_momentum, launch.radius * launch.speed, 1e-300)
        l_err = (angular_momentum_norm(x, v) - launch.angular_momentum) / l_scale
        header = ["t"] + ["x_%d" % (i + 1) for i in range(d)] + \
                 ["v_%d" % (i + 1) for i in range(d)] + ["r", "energy_err", "L_err"]
        table = np.column_stack([ts, x, v, r, e_err, l_err])
        np.savetxt(path, table, delimiter=",", header=",".join(header), comments="")


class _FlightDriver:
    """Advance a batch of flights to their hazard targets or durations."""

    def __init__(self, config: ModelConfig, x0, u0, hazard_targets=None,
                 durations=None, record=False, t_max=None, radial_bounds=None):
        self.config = config
        d = self.d = config.dimension
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        u0 = np.atleast_2d(np.asarray(u0, dtype=float))
        self.n_rows = x0.shape[0]
        r0 = np.linalg.norm(x0, axis=1)
        if np.any(r0 <= config.domain.lower) or np.any(r0 >= config.domain.upper):
            raise ModelError("launch radius outside the open domain")
        gap = config.energy - np.asarray(config.u(r0), dtype=float)
        if np.any(~(gap > 0)):
            raise ModelError("E - U <= 0 at a launch radius (A2 violated)")
        vn = config.scaling_n ** -0.25 * np.sqrt(2.0 * gap / config.mass)
        y0 = np.zeros((self.n_rows, 2 * d + 1))
        y0[:, :d] = x0
        y0[:, d:2 * d] = vn[:, None] * u0
        self.y0 = y0

        self.targets = None if hazard_targets is None else np.asarray(hazard_targets, float)
        self.durations = None if durations is None else \
            np.broadcast_to(np.asarray(durations, dtype=float), (self.n_rows,)).copy()
        if (self.targets is None) == (self.durations is None):
            raise ValueError("exactly one of hazard_targets/durations required")
        self.t_max = config.options.t_max if t_max is None else t_max
        self.record = record
        self.radial_bounds = radial_bounds

        opts = config.options
        self.rhs = make_flight_rhs(config)
        self.energy_n = config.energy_n
        self.launch_energy = 0.5 * config.mass * vn ** 2 + \
            np.asarray(config.u_n(r0), dtype=float)
        self.energy_scale = np.maximum(np.abs(self.launch_energy),
                                       0.5 * config.mass * vn ** 2) + 1e-300
        self.energy_guard = 10.0 * opts.rtol
        self.launch_L = angular_momentum_norm(x0, y0[:, d:2 * d])
        self.l_scale = np.maximum(self.launch_L, r0 * vn) + 1e-300
        scale = config.length_scale()
        self.eps_origin = opts.epsilon_origin_factor * scale
        self.origin_possible = self.launch_L < 1e-8 * self.l_scale
        # launch axis: radial flights stay on it, so an origin crossing is a
        # sign flip of the projection (steps can jump the eps-ball entirely)
        self.axis = x0 / np.maximum(r0, 1e-300)[:, None]
        self.singular = config.potential.singular_at_origin()

        self.batch = rk.AdaptiveBatch(self.rhs, np.zeros(self.n_rows), y0,
                                      rtol=opts.rtol, atol=opts.atol,
                                      post_check=self._energy_check)
        self.done = np.zeros(self.n_rows, dtype=bool)
        self.status = np.full(self.n_rows, FlightStatus.OK, dtype=int)
        self.N = np.zeros(self.n_rows)
        self.final = np.zeros_like(y0)
        self.e_drift = np.zeros(self.n_rows)
        self.l_drift = np.zeros(self.n_rows)
        self.n_steps = np.zeros(self.n_rows, dtype=int)
        self.band_exit = np.full(self.n_rows, np.nan)
        self.steps = [[] for _ in range(self.n_rows)] if record else None
        self.crossings = [[] for _ in range(self.n_rows)]

    # the guard rejects otherwise-accepted steps whose energy drifted
    def _energy_check(self, rows, y_old, y_new):
        d = self.d
        v2 = np.einsum("ij,ij->i", y_new[:, d:2 * d], y_new[:, d:2 * d])
        r = np.linalg.norm(y_new[:, :d], axis=1)
        e = 0.5 * self.config.mass * v2 + np.asarray(self.config.u_n(r), dtype=float)
        drift = np.abs(e - self.launch_energy[rows]) / self.energy_scale[rows]
        return drift <= self.energy_guard

    def _finalize(self, row, t_flight, state, status):
        self.done[row] = True
        self.status[row] = status
        self.N[row] = t_flight
        self.final[row] = state
        d = self.d
        v = state[d:2 * d]
        r = float(np.linalg.norm(state[:d]))
        e = 0.5 * self.config.mass * float(v @ v) + float(self.config.u_n(r))
        drift = abs(e - self.launch_energy[row]) / self.energy_scale[row]
        self.e_drift[row] = max(self.e_drift[row], drift)

    def _record_step(self, row, t0, t1, h, y0, q):
        if self.steps is not None:
            self.steps[row].append((t0, t1, h, y0.copy(), q.copy()))

    def _origin_bridge(self, row, t_evt, state):
        """Flip through the origin; returns the relaunched state or None."""
        d = self.d
        cfg = self.config
        x_e = state[:d]
        v_e = state[d:2 * d]
        speed = float(np.linalg.norm(v_e))
        if self.singular and speed > cfg.options.v_cap:
            return None
        r_e = float(np.linalg.norm(x_e))
        nodes = np.linspace(0.0, max(r_e, 1e-300), 17)[1:]
        gap = cfg.energy - np.asarray(cfg.u(nodes), dtype=float)
        if np.any(gap <= 0) or not np.all(np.isfinite(gap)):
            return None
        vn = cfg.scaling_n ** -0.25 * np.sqrt(2.0 * gap / cfg.mass)
        dr = nodes[1] - nodes[0]
        # open-ended trapezoid on (0, r_e]; integrands are regular at 0
        dt_bridge = 2.0 * float(np.trapezoid(1.0 / vn, dx=dr) + (1.0 / vn[0]) * dr)
        gn = math.sqrt(cfg.scaling_n) * np.asarray(cfg.g(nodes), dtype=float)
        df_bridge = 2.0 * float(np.trapezoid(gn, dx=dr) + gn[0] * dr)
        new = state.copy()
        new[:d] = -x_e
        new[2 * d] = state[2 * d] + df_bridge
        self.crossings[row].append((t_evt, t_evt + dt_bridge))
        if self.steps is not None:
            # linear bridge step between the mirrored endpoints
            y0 = state.copy()
            y1 = new.copy()
            h = max(dt_bridge, 1e-300)
            q = np.zeros((2 * d + 1, 4))
            q[:, 0] = (y1 - y0) / h
            self.steps[row].append((t_evt, t_evt + dt_bridge, h, y0, q))
        return t_evt + dt_bridge, new

    def _finalize_many(self, rows, t_flight, states, status):
        """Vectorized flight completion for an index array of rows."""
        if rows.size == 0:
            return
        d = self.d
        cfg = self.config
        self.done[rows] = True
        self.status[rows] = status
        self.N[rows] = t_flight
        self.final[rows] = states
        v = states[:, d:2 * d]
        r = np.linalg.norm(states[:, :d], axis=1)
        e = 0.5 * cfg.mass * np.einsum("ij,ij->i", v, v) + \
            np.asarray(cfg.u_n(r), dtype=float)
        drift = np.abs(e - self.launch_energy[rows]) / self.energy_scale[rows]
        self.e_drift[rows] = np.maximum(self.e_drift[rows], drift)

    def run(self):
        cfg = self.config
        d = self.d
        slow_path = self.record or self.radial_bounds is not None
        max_sweeps = 2_000_000
        for _ in range(max_sweeps):
            active = np.nonzero(~self.done)[0]
            if active.size == 0:
                break
            if self.durations is not None:
                ended = self.batch.t[active] >= self.durations[active] * (1 - 1e-14)
                at_end = active[ended]
                self._finalize_many(at_end, self.durations[at_end],
                                    self.batch.y[at_end], FlightStatus.OK)
                active = active[~ended]
                if active.size == 0:
                    continue
                remaining = self.durations[active] - self.batch.t[active]
                self.batch.h_cap[active] = np.maximum(remaining, 1e-300)
            acc_rows, t_old, y_old, h_used, K = self.batch.sweep(active)

            # rows stuck at underflow
            uf = active[self.batch.underflow[active] & ~self.done[active]]
            if uf.size:
                self._finalize_many(uf, self.batch.t[uf], self.batch.y[uf],
                                    FlightStatus.STEP_UNDERFLOW)

            if acc_rows.size == 0:
                continue
            self.n_steps[acc_rows] += 1
            # dense coefficients are only needed where an event localizes or
            # a path is recorded; defer them on the vectorized fast path
            q_all = rk.dense_coefficients(h_used, K) if slow_path else None
            y_new = self.batch.y[acc_rows]

            # conservation monitoring on accepted steps
            r_new = np.linalg.norm(y_new[:, :d], axis=1)
            v_new = y_new[:, d:2 * d]
            e_inst = 0.5 * cfg.mass * np.einsum("ij,ij->i", v_new, v_new) + \
                np.asarray(cfg.u_n(r_new), dtype=float)
            drift = np.abs(e_inst - self.launch_energy[acc_rows]) / \
                self.energy_scale[acc_rows]
            self.e_drift[acc_rows] = np.maximum(self.e_drift[acc_rows], drift)
            l_now = angular_momentum_norm(y_new[:, :d], v_new)
            self.l_drift[acc_rows] = np.maximum(
                self.l_drift[acc_rows],
                np.abs(l_now - self.launch_L[acc_rows]) / self.l_scale[acc_rows])

            # event fractions per accepted row (inf = no event in step)
            theta_hazard = np.full(acc_rows.size, np.inf)
            theta_origin = np.full(acc_rows.size, np.inf)
            q_cache = {}

            def q_for(sel):
                key = sel.tobytes()
                if key not in q_cache:
                    q_cache[key] = q_all[sel] if q_all is not None else \
                        rk.dense_coefficients(h_used[sel], K[sel])
                return q_cache[key]

            if self.targets is not None:
                tgt = self.targets[acc_rows]
                crossed = y_new[:, 2 * d] >= tgt
                if np.any(crossed):
                    sel = np.nonzero(crossed)[0]
                    q_sel = q_for(sel)
                    theta_hazard[sel] = rk.bisect_scalar(
                        y_old[sel, 2 * d], h_used[sel], q_sel[:, 2 * d, :],
                        tgt[sel], np.zeros(sel.size), np.ones(sel.size),
                        cfg.options.event_time_tol)

            origin_rows = self.origin_possible[acc_rows]
            if np.any(origin_rows):
                eps = self.eps_origin
                axis = self.axis[acc_rows]
                proj_old = np.einsum("ij,ij->i", y_old[:, :d], axis)
                proj_new = np.einsum("ij,ij->i", y_new[:, :d], axis)
                r_old = np.linalg.norm(y_old[:, :d], axis=1)
                flipped = np.sign(proj_new) != np.sign(proj_old)
                hit = origin_rows & (flipped | (r_new < eps)) & (r_old > eps)
                if np.any(hit):
                    sel = np.nonzero(hit)[0]
                    q_sel = q_for(sel)
                    # signed projection on the launch axis touching +-eps
                    q_proj = np.einsum("mjp,mj->mp", q_sel[:, :d, :], axis[sel])
                    theta_origin[sel] = rk.bisect_scalar(
                        proj_old[sel], h_used[sel], q_proj,
                        np.sign(proj_old[sel]) * eps,
                        np.zeros(sel.size), np.ones(sel.size),
                        cfg.options.event_time_tol)

            hazard_first = np.isfinite(theta_hazard) & (theta_hazard <= theta_origin)
            origin_first = np.isfinite(theta_origin) & ~hazard_first

            if slow_path:
                # small batches: per-row bookkeeping with recording/band scan
                for i, row in enumerate(acc_rows):
                    t0, h = t_old[i], h_used[i]
                    if hazard_first[i]:
                        t_evt = t0 + theta_hazard[i] * h
                        state = rk.dense_eval(y_old[i:i + 1], h_used[i:i + 1],
                                              q_all[i:i + 1],
                                              np.array([theta_hazard[i]]))[0]
                        self._record_step(row, t0, t_evt, h, y_old[i], q_all[i])
                        self._track_band(row, y_old[i], h, q_all[i], t0, t_evt)
                        self._finalize(row, t_evt, state, FlightStatus.OK)
                    elif origin_first[i]:
                        t_evt = t0 + theta_origin[i] * h
                        state = rk.dense_eval(y_old[i:i + 1], h_used[i:i + 1],
                                              q_all[i:i + 1],
                                              np.array([theta_origin[i]]))[0]
                        self._record_step(row, t0, t_evt, h, y_old[i], q_all[i])
                        self._track_band(row, y_old[i], h, q_all[i], t0, t_evt)
                        bridged = self._origin_bridge(row, t_evt, state)
                        if bridged is None:
                            self._finalize(row, t_evt, state,
                                           FlightStatus.SINGULAR_INFALL)
                        else:
                            t_re, y_re = bridged
                            self.batch.reset_rows(np.array([row]), np.array([t_re]),
                                                  y_re[None, :])
                    else:
                        self._record_step(row, t0, t0 + h, h, y_old[i], q_all[i])
                        self._track_band(row, y_old[i], h, q_all[i], t0, t0 + h)
                        if self.batch.t[row] >= self.t_max and self.targets is not None:
                            self._finalize(row, self.batch.t[row], self.batch.y[row],
                                           FlightStatus.SLOW_REGION)
            else:
                # vectorized hazard completions
                if np.any(hazard_first):
                    sel = np.nonzero(hazard_first)[0]
                    th = theta_hazard[sel]
                    states = rk.dense_eval(y_old[sel], h_used[sel], q_for(sel), th)
                    self._finalize_many(acc_rows[sel], t_old[sel] + th * h_used[sel],
                                        states, FlightStatus.OK)
                # origin bridges stay per-row (rare: exactly radial launches)
                for i in np.nonzero(origin_first)[0]:
                    row = acc_rows[i]
                    t_evt = t_old[i] + theta_origin[i] * h_used[i]
                    q_i = rk.dense_coefficients(h_used[i:i + 1], K[i:i + 1])
                    state = rk.dense_eval(y_old[i:i + 1], h_used[i:i + 1],
                                          q_i, np.array([theta_origin[i]]))[0]
                    bridged = self._origin_bridge(row, t_evt, state)
                    if bridged is None:
                        self._finalize(row, t_evt, state, FlightStatus.SINGULAR_INFALL)
                    else:
                        t_re, y_re = bridged
                        self.batch.reset_rows(np.array([row]), np.array([t_re]),
                                              y_re[None, :])
                if self.targets is not None:
                    plain = ~hazard_first & ~origin_first
                    late = acc_rows[plain & (self.batch.t[acc_rows] >= self.t_max)]
                    late = late[~self.done[late]]
                    if late.size:
                        self._finalize_many(late, self.batch.t[late],
                                            self.batch.y[late],
                                            FlightStatus.SLOW_REGION)
        else:
            raise IntegrationError("flight driver exceeded sweep budget",
                                   last_state=self.batch.y, last_time=self.batch.t)
        return self._result()

    def _track_band(self, row, y0, h, q, t0, t1):
        if self.radial_bounds is None or not math.isnan(self.band_exit[row]):
            return
        l, u = self.radial_bounds
        d = self.d
        thetas = np.linspace(0.0, (t1 - t0) / h, 17)
        states = rk.dense_eval(np.repeat(y0[None, :], 17, axis=0),
                               np.full(17, h),
                               np.repeat(q[None, :, :], 17, axis=0), thetas)
        r = np.linalg.norm(states[:, :d], axis=1)
        out = (r < l) | (r > u)
        if np.any(out):
            j = int(np.argmax(out))
            if j == 0:
                self.band_exit[row] = t0
                return
            # refine the first crossing inside [theta_{j-1}, theta_j]
            bound = l if r[j] < l else u
            sign = 1.0 if r[j] < l else -1.0

            def gap(states, bound=bound, sign=sign):
                return sign * (np.linalg.norm(states[:, :d], axis=1) - bound)

            theta = rk.bisect_dense(gap, y0[None, :], np.array([h]),
                                    q[None, :, :],
                                    np.array([thetas[j - 1]]), np.array([thetas[j]]),
                                    self.config.options.event_time_tol)
            self.band_exit[row] = t0 + float(theta[0]) * h

    def _result(self):
        return FlightResult(self.N, self.final, self.status, self.e_drift,
                            self.l_drift, self.n_steps, self.band_exit,
                            self._segments() if self.record else None)

    def _segments(self):
        segs = []
        for row in range(self.n_rows):
            steps = self.steps[row]
            if not steps:
                y0 = self.y0[row]
                segs.append(PathSegment(self.config, np.zeros(1), np.zeros(1),
                                        np.ones(1), y0[None, :],
                                        np.zeros((1, y0.size, 4)), y0.copy(), 0.0,
                                        0.0, 0.0, FlightStatus(self.status[row])))
                continue
            t0s = np.array([s[0] for s in steps])
            t1s = np.array([s[1] for s in steps])
            hs = np.array([s[2] for s in steps])
            y0s = np.stack([s[3] for s in steps])
            qs = np.stack([s[4] for s in steps])
            segs.append(PathSegment(self.config, t0s, t1s, hs, y0s, qs,
                                    self.final[row].copy(), float(self.N[row]),
                                    float(self.e_drift[row]), float(self.l_drift[row]),
                                    FlightStatus(self.status[row]),
                                    origin_crossings=list(self.crossings[row])))
        return segs


@dataclass
class FlightResult:
    """Batched flight outcomes; states are [x, v, F] rows."""

    durations: np.ndarray
    states: np.ndarray
    status: np.ndarray
    energy_drift: np.ndarray
    angmom_drift: np.ndarray
    n_steps: np.ndarray
    band_exit: np.ndarray
    segments: Optional[list] = None

    def positions(self, d):
        return self.states[:, :d]

    def hazards(self, d):
        return self.states[:, 2 * d]


def run_flights(config, x0, u0, hazard_targets=None, durations=None,
                record=False, t_max=None, radial_bounds=None) -> FlightResult:
    driver = _FlightDriver(config, x0, u0, hazard_targets=hazard_targets,
                           durations=durations, record=record, t_max=t_max,
                           radial_bounds=radial_bounds)
    return driver.run()


def integrate(state: PhaseState, t_end: float, config: ModelConfig,
              radial_bounds=None) -> PathSegment:
    """Integrate one flight for a fixed duration with dense output."""
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    speed = state.speed
    if speed <= 0:
        raise ModelError("cannot integrate a zero-speed state")
    u = state.velocity / speed
    # scale check: the driver relaunches on the energy surface, so the state
    # must sit on it (launch_state output always does)
    vn = scaled_speed(config, state.radius)
    if abs(speed - vn) > 1e-6 * max(vn, 1e-300):
        raise ModelError("state is off the configured energy surface")
    res = run_flights(config, state.position[None, :], u[None, :],
                      durations=float(t_end), record=True,
                      radial_bounds=radial_bounds)
    seg = res.segments[0]
    if seg.status == FlightStatus.STEP_UNDERFLOW:
        raise IntegrationError("step size underflow (stiff or singular region)",
                               last_state=seg.end_state, last_time=seg.duration)
    if seg.status == FlightStatus.SINGULAR_INFALL:
        raise SingularInfallError("radial infall into singular origin",
                                  last_state=seg.end_state, last_time=seg.duration)
    return seg


@dataclass
class PolarTrace:
    """(t, r, alpha, rdot, alphadot) samples within the flight's plane."""

    t: np.ndarray
    r: np.ndarray
    alpha: np.ndarray
    rdot: np.ndarray
    alphadot: np.ndarray
    valid: np.ndarray


def polar_reduce(segment: PathSegment, n_samples: int = 257) -> PolarTrace:
    """Reduce a flight to polar coordinates in its invariant plane."""
    cfg = segment.config
    d = cfg.dimension
    ts = segment.sample_times(n_samples)
    states = segment.state_at(ts)
    x = states[:, :d]
    v = states[:, d:2 * d]
    x0 = segment.y_starts[0, :d]
    v0 = segment.y_starts[0, d:2 * d]
    r0 = np.linalg.norm(x0)
    e1 = x0 / r0
    tang = v0 - (v0 @ e1) * e1
    tn = np.linalg.norm(tang)
    if tn > 1e-12 * max(np.linalg.norm(v0), 1e-300):
        e2 = tang / tn
    else:
        # radial flight: any orthonormal completion (deterministic choice)
        k = int(np.argmin(np.abs(e1)))
        e2 = -e1 * e1[k]
        e2[k] += 1.0
        e2 /= np.linalg.norm(e2)
    a = x @ e1
    b = x @ e2
    va = v @ e1
    vb = v @ e2
    r = np.linalg.norm(x, axis=1)
    eps = cfg.options.epsilon_origin_factor * cfg.length_scale()
    valid = r >= eps
    alpha = np.unwrap(np.arctan2(b, a))
    with np.errstate(divide="ignore", invalid="ignore"):
        rdot = np.einsum("ij,ij->i", x, v) / r
        plane_r2 = a * a + b * b
        alphadot = (a * vb - b * va) / plane_r2
    return PolarTrace(ts, r, alpha, rdot, alphadot, valid)


def taylor_residual(segment: PathSegment, t: float, tau_grid: int = 256) -> float:
    """Residual of the second-order radial expansion, minimized over the
    Lagrange point tau in [0, t]; a realizability oracle for the expansion."""
    cfg = segment.config
    d = cfg.dimension
    x0 = segment.y_starts[0, :d]
    v0 = segment.y_starts[0, d:2 * d]
    r0 = float(np.linalg.norm(x0))
    speed0 = float(np.linalg.norm(v0))
    cos_theta = float(x0 @ v0) / (r0 * speed0)
    sin2 = max(0.0, 1.0 - cos_theta ** 2)
    r_t = float(np.linalg.norm(segment.state_at(t)[:d]))
    taus = np.linspace(0.0, t, tau_grid)
    r_tau = np.linalg.norm(segment.state_at(taus)[:, :d], axis=1)
    sqrt_n = math.sqrt(cfg.scaling_n)
    psi = -np.asarray(cfg.du(r_tau), dtype=float) / (sqrt_n * cfg.mass) + \
        (speed0 ** 2) * (r0 ** 2) * sin2 / np.maximum(r_tau, 1e-300) ** 3
    residual = r_t - (r0 + speed0 * cos_theta * t + 0.5 * psi * t * t)
    return float(np.min(np.abs(residual)))

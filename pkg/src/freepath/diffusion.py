"""Euler-Maruyama simulation of the limiting diffusion, its radial
projection, the additive clock functional, and the natural-time change.

The full-space process has isotropic diffusion coefficient sigma^2(x) =
2/(d g(x)^2) (per the covariance convention flag) and drift equal to the
limiting spatial drift of the chain.  Its radius is itself a diffusion whose
drift picks up the Bessel term (d-1) sigma^2 / (2 r); the radial simulator
uses that projection so the two marginals agree by construction.

The clock A(t) = integral ds / (g v) accumulates by the trapezoid rule along
each path (with the integrand frozen after a band exit, matching the stopped
construction), and Omega(t) = inf{s : A(s) > t} inverts it.  The time-changed
process is itself a diffusion whose coefficients are the original ones
multiplied by the clock rate g v; ``natural_scale=True`` simulates that
generator directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ModelError
from .model import ModelConfig, speed
from .numerics.rng import RngStream
from .stats import clock_rate, drift_field, sigma2_field


@dataclass
class DiffusionCoefficients:
    """Drift field, isotropic diffusion coefficient, and clock rate."""

    config: ModelConfig
    convention: str = "two-over-d"

    def drift(self, x):
        return drift_field(self.config, x)

    def sigma2(self, r):
        return sigma2_field(self.config, r, self.convention)

    def clock(self, r):
        return clock_rate(self.config, r)

    def radial_drift(self, r):
        """Ito projection of the full-space generator onto the radius."""
        r = np.asarray(r, dtype=float)
        cfg = self.config
        d = cfg.dimension
        g = np.asarray(cfg.g(r), dtype=float)
        dg = np.asarray(cfg.dg(r), dtype=float)
        du = np.asarray(cfg.du(r), dtype=float)
        v2 = np.asarray(speed(cfg, r), dtype=float) ** 2
        b_r = -(1.0 / (d * g * g)) * ((d - 1) * du / (cfg.mass * v2) + dg / g)
        return b_r + (d - 1) * self.sigma2(r) / (2.0 * r)


def _make_kernel(config, radial, convention, natural_scale):
    """Fused drift/diffusion/clock evaluation for the EM hot loop.

    Working states are strictly interior (rows leave the set at the band
    exit), so the energy-surface quantities are evaluated raw with a clip
    for post-exit safety.
    """
    d = config.dimension
    mass = config.mass
    u_f = config.potential.evaluator
    du_f = config.potential.derivative
    g_f = config.density.evaluator
    dg_f = config.density.derivative
    num = 2.0 if convention == "two-over-d" else float(d - 1)
    energy = config.energy
    lo = config.domain.lower + 1e-15 * config.length_scale()
    hi = config.domain.upper

    def kernel(x):
        if radial:
            r = np.abs(x[:, 0])
        else:
            r = np.sqrt(np.einsum("ij,ij->i", x, x))
        rc = np.clip(r, lo, hi)
        g = np.asarray(g_f(rc), dtype=float)
        dg = np.asarray(dg_f(rc), dtype=float)
        du = np.asarray(du_f(rc), dtype=float)
        gap = np.maximum(energy - np.asarray(u_f(rc), dtype=float), 1e-300)
        inv_g2 = 1.0 / (g * g)
        s2 = (num / d) * inv_g2
        b_r = -(inv_g2 / d) * ((d - 1) * du / (2.0 * gap) + dg / g)
        lam = g * np.sqrt(2.0 * gap / mass)
        if radial:
            drift = (b_r + (d - 1) * s2 / (2.0 * rc))[:, None]
        else:
            drift = (b_r / rc)[:, None] * x
        if natural_scale:
            drift = drift * lam[:, None]
            s2 = s2 * lam
        return drift, s2, 1.0 / lam

    def clock_inv(r):
        rc = np.clip(r, lo, hi)
        g = np.asarray(g_f(rc), dtype=float)
        gap = np.maximum(energy - np.asarray(u_f(rc), dtype=float), 1e-300)
        return 1.0 / (g * np.sqrt(2.0 * gap / mass))

    return kernel, clock_inv


@dataclass
class DiffusionPath:
    """One simulated path on a uniform time grid with its clock."""

    times: np.ndarray
    states: np.ndarray           # (T+1, d) or (T+1,) for the radial process
    clock: np.ndarray            # A(t) on the same grid
    band: Optional[tuple]
    exited: bool
    exit_time: Optional[float]
    exit_state: Optional[np.ndarray]
    exit_clock: Optional[float]
    radial: bool

    def radius(self):
        if self.radial:
            return self.states
        return np.linalg.norm(self.states, axis=1)

    def to_csv(self, path):
        states = self.states[:, None] if self.radial else self.states
        header = ["t"] + ["x_%d" % (i + 1) for i in range(states.shape[1])] + ["A"]
        table = np.column_stack([self.times, states, self.clock])
        np.savetxt(path, table, delimiter=",", header=",".join(header), comments="")


class _EmEnsemble:
    """Vectorized EM ensemble with per-replica substreams.

    Paths freeze at the band exit (linearly interpolated within the crossing
    step) and leave the working set; their clock continues at the frozen
    rate 1/lambda(exit state), which is linear in time and therefore
    evaluated in closed form rather than stepped.  The working arrays are
    compacted at noise-refill boundaries so stragglers cost nothing.
    """

    def __init__(self, config, x0, n_paths, dt, band, rng, radial,
                 convention="two-over-d", natural_scale=False, chunk=None):
        self.config = config
        self.coeffs = DiffusionCoefficients(config, convention)
        self.kernel, self.clock_inv = _make_kernel(config, radial, convention,
                                                   natural_scale)
        self.radial = radial
        self.natural_scale = natural_scale
        self.dt = float(dt)
        self.band = band
        chunk = chunk or (1024 if radial else 256)
        if band is not None:
            l, u = band
            if not (config.domain.lower < l < u < config.domain.upper):
                raise ModelError("band must sit inside the open domain")
        self.B = n_paths
        self.d = 1 if radial else config.dimension
        x0 = np.asarray(x0, dtype=float)
        X = np.full((n_paths, 1), float(x0)) if radial else np.tile(x0, (n_paths, 1))
        r0 = self._radius(X)
        if np.any(r0 <= config.domain.lower) or np.any(r0 >= config.domain.upper):
            raise ModelError("initial state outside the open domain")
        inv0 = self.clock_inv(r0)
        if not np.all(np.isfinite(inv0)) or np.any(inv0 <= 0):
            raise ModelError("non-finite clock rate at the initial state")
        # compact working set (all paths initially)
        self.ids = np.arange(n_paths)
        self.X = X
        self.A = np.zeros(n_paths)
        self.inv_rate = inv0
        self.alive = np.ones(n_paths, dtype=bool)  # within the working set
        self._n_alive = n_paths
        # full-size results
        self.exit_time = np.full(n_paths, np.nan)
        self.exit_state = np.full((n_paths, self.d), np.nan)
        self.exit_clock = np.full(n_paths, np.nan)
        self.exit_inv_rate = np.full(n_paths, np.nan)
        self.t = 0.0
        self.chunk = chunk
        self.gens = [rng.substream(i).generator() for i in range(n_paths)]
        self.buf = np.empty((n_paths, chunk, self.d))
        self.step_index = 0

    def _radius(self, x):
        return np.abs(x[:, 0]) if self.radial else np.linalg.norm(x, axis=1)

    @property
    def n_moving(self):
        return self._n_alive

    def _refill_and_compact(self):
        keep = np.nonzero(self.alive)[0]
        self.ids = self.ids[keep]
        self.X = self.X[keep]
        self.A = self.A[keep]
        self.inv_rate = self.inv_rate[keep]
        self.alive = np.ones(keep.size, dtype=bool)
        self._n_alive = keep.size
        if self.buf.shape[0] != keep.size:
            self.buf = np.empty((keep.size, self.chunk, self.d))
        for j, pid in enumerate(self.ids):
            self.buf[j] = self.gens[pid].standard_normal((self.chunk, self.d))

    def step(self):
        """One EM step over the working set.

        Returns (ids, x_old, a_old, x_new, a_new) aligned with the working
        set before any mid-chunk removals (exited rows included, with their
        post-exit clock values).
        """
        cursor = self.step_index % self.chunk
        if cursor == 0:
            self._refill_and_compact()
        dt = self.dt
        xi = self.buf[:, cursor]
        rows = self.alive
        all_alive = self._n_alive == self.alive.size
        x_old = self.X.copy()
        a_old = self.A.copy()
        if all_alive:
            b, s2, _ = self.kernel(self.X)
            self.X = self.X + b * dt + (np.sqrt(s2 * dt))[:, None] * xi
        elif self._n_alive:
            x = self.X[rows]
            b, s2, _ = self.kernel(x)
            self.X[rows] = x + b * dt + (np.sqrt(s2 * dt))[:, None] * xi[rows]

        r_new = self._radius(self.X)
        with np.errstate(invalid="ignore", divide="ignore"):
            inv_cand = self.clock_inv(r_new)
        ok = np.isfinite(inv_cand) & (inv_cand > 0)
        if self.band is None and bool(np.any(~ok & rows)):
            raise ModelError("clock rate became non-finite; supply a band")
        inv_new = np.where(rows & ok, inv_cand, self.inv_rate)
        d_a = 0.5 * dt * (self.inv_rate + inv_new)
        self.A = self.A + d_a
        self.inv_rate = inv_new
        self.step_index += 1
        self.t = self.step_index * dt

        if self.band is not None and self._n_alive:
            l, u = self.band
            out = rows & ((r_new < l) | (r_new > u))
            if np.any(out):
                idx = np.nonzero(out)[0]
                pid = self.ids[idx]
                r_prev = self._radius(x_old[idx])
                bound = np.where(r_new[idx] < l, l, u)
                denom = r_new[idx] - r_prev
                frac = np.clip((bound - r_prev) /
                               np.where(np.abs(denom) < 1e-300, 1.0, denom), 0.0, 1.0)
                self.exit_time[pid] = self.t - dt + frac * dt
                self.exit_state[pid] = x_old[idx] + \
                    frac[:, None] * (self.X[idx] - x_old[idx])
                self.exit_clock[pid] = a_old[idx] + frac * d_a[idx]
                self.exit_inv_rate[pid] = self.clock_inv(
                    self._radius(self.exit_state[pid]))
                self.X[idx] = self.exit_state[pid]
                self.inv_rate[idx] = self.exit_inv_rate[pid]
                self.A[idx] = self.exit_clock[pid] + \
                    (self.t - self.exit_time[pid]) * self.inv_rate[idx]
                self.alive[idx] = False
                self._n_alive -= idx.size
        return self.ids, x_old, a_old, self.X, self.A

    def states_full(self):
        """Current full-ensemble states: working rows plus frozen exits."""
        out_states = np.empty((self.B, self.d))
        exited = np.isfinite(self.exit_time)
        out_states[exited] = self.exit_state[exited]
        out_states[self.ids] = self.X
        return out_states[:, 0].copy() if self.radial else out_states

    def clock_full(self, t=None):
        """Clock A(t) for every path (closed form after the exit)."""
        t = self.t if t is None else t
        out = np.empty(self.B)
        exited = np.isfinite(self.exit_time)
        out[exited] = self.exit_clock[exited] + \
            np.maximum(t - self.exit_time[exited], 0.0) * self.exit_inv_rate[exited]
        out[self.ids] = self.A
        return out


def ensemble(config: ModelConfig, x0, n_paths: int, dt: float, band, rng: RngStream,
             radial: bool = False, convention: str = "two-over-d",
             natural_scale: bool = False, t_snapshot: Optional[float] = None,
             clock_target: Optional[float] = None, horizon: Optional[float] = None,
             require_exit: bool = False) -> dict:
    """Run an EM ensemble and harvest snapshots, exits, and clock crossings.

    - ``t_snapshot``: record states and clock at the grid time t (stopped
      rows contribute their frozen exit state and closed-form clock).
    - ``clock_target``: record the state and time at the first s with
      A(s) > target (sub-step linear interpolation; closed form for rows
      that exited the band earlier).
    - ``require_exit``: keep stepping until every path exited the band or
      the horizon cap is reached.
    """
    ens = _EmEnsemble(config, x0, n_paths, dt, band, rng, radial, convention,
                      natural_scale)
    dim = ens.d
    snap_state = None
    snap_clock = None
    state_at_clock = np.full((n_paths, dim), np.nan) if clock_target is not None else None
    time_at_clock = np.full(n_paths, np.nan) if clock_target is not None else None
    n_snap = None if t_snapshot is None else int(round(t_snapshot / dt))
    if horizon is None:
        horizon = t_snapshot if t_snapshot is not None else 1.0
    cap = int(math.ceil(horizon / dt)) + 1

    step = 0
    while True:
        moving = ens.n_moving > 0
        pending = False
        if n_snap is not None and step < n_snap and moving:
            pending = True
        if require_exit and moving and step < cap:
            pending = True
        if clock_target is not None and moving and step < cap and \
                bool(np.any(np.isnan(time_at_clock[ens.ids[ens.alive]]))):
            pending = True
        if not pending:
            break
        ids, x_old, a_old, x_new, a_new = ens.step()
        step += 1
        if clock_target is not None:
            crossed = np.isnan(time_at_clock[ids]) & (a_new > clock_target)
            if np.any(crossed):
                j = np.nonzero(crossed)[0]
                d_a = a_new[j] - a_old[j]
                frac = np.clip((clock_target - a_old[j]) /
                               np.where(d_a <= 0, 1.0, d_a), 0.0, 1.0)
                state_at_clock[ids[j]] = x_old[j] + frac[:, None] * (x_new[j] - x_old[j])
                time_at_clock[ids[j]] = (step - 1 + frac) * dt
        if n_snap is not None and step == n_snap:
            snap_state = ens.states_full()
            snap_clock = ens.clock_full()

    # closed-form finishing for paths that exited before their targets
    exited = np.isfinite(ens.exit_time)
    if clock_target is not None:
        todo = np.isnan(time_at_clock) & exited & (ens.exit_clock <= clock_target)
        if np.any(todo):
            lam_frozen = 1.0 / ens.exit_inv_rate[todo]
            time_at_clock[todo] = ens.exit_time[todo] + \
                (clock_target - ens.exit_clock[todo]) * lam_frozen
            state_at_clock[todo] = ens.exit_state[todo]
    if n_snap is not None and snap_state is None:
        snap_state = ens.states_full()
        snap_clock = ens.clock_full(t_snapshot)
    return {
        "final_states": ens.states_full(),
        "exit_time": ens.exit_time,
        "exit_state": ens.exit_state[:, 0].copy() if radial else ens.exit_state,
        "exit_clock": ens.exit_clock,
        "snapshot": snap_state,
        "snapshot_clock": snap_clock,
        "state_at_clock": None if state_at_clock is None else
            (state_at_clock[:, 0].copy() if radial else state_at_clock),
        "time_at_clock": time_at_clock,
        "clock": ens.clock_full(),
        "exited": exited,
        "steps": step,
    }


def _record_path(config, x0, dt, horizon, band, rng, radial, convention,
                 natural_scale=False):
    ens = _EmEnsemble(config, x0, 1, dt, band, rng, radial, convention, natural_scale)
    n_steps = int(round(horizon / dt))
    states = np.empty((n_steps + 1, ens.d))
    clock = np.empty(n_steps + 1)
    states[0] = ens.X[0]
    clock[0] = 0.0
    for s in range(1, n_steps + 1):
        if ens.n_moving == 0:
            # absorbed: state frozen, clock continues at the frozen rate
            states[s:] = ens.exit_state[0]
            t_rest = dt * np.arange(s, n_steps + 1)
            clock[s:] = ens.exit_clock[0] + \
                (t_rest - ens.exit_time[0]) * ens.exit_inv_rate[0]
            break
        ens.step()
        full = ens.states_full()
        states[s] = full if radial else full[0]
        clock[s] = ens.clock_full()[0]
    times = dt * np.arange(n_steps + 1)
    exited = bool(np.isfinite(ens.exit_time[0]))
    return DiffusionPath(times, states[:, 0] if radial else states, clock, band,
                         exited,
                         float(ens.exit_time[0]) if exited else None,
                         (float(ens.exit_state[0, 0]) if radial
                          else ens.exit_state[0].copy()) if exited else None,
                         float(ens.exit_clock[0]) if exited else None, radial)


def simulate_G(x0, config: ModelConfig, horizon: float, dt: float, band,
               rng: RngStream, convention: str = "two-over-d",
               natural_scale: bool = False) -> DiffusionPath:
    """One Euler-Maruyama path of the full-space limiting diffusion,
    absorbed at the band exit (linear sub-step exit interpolation).

    With ``natural_scale=True`` the coefficients are multiplied by the clock
    rate g v, i.e. the time-changed generator is simulated directly.
    """
    x0 = np.asarray(x0, dtype=float)
    return _record_path(config, x0, dt, horizon, band, rng, False, convention,
                        natural_scale)


def simulate_Gr(r0: float, config: ModelConfig, horizon: float, dt: float, band,
                rng: RngStream, convention: str = "two-over-d") -> DiffusionPath:
    """One path of the radial projection (Bessel-corrected drift)."""
    return _record_path(config, float(r0), dt, horizon, band, rng, True, convention)


def time_change_Omega(path: DiffusionPath, t: float) -> float:
    """Omega(t) = inf{s : A(s) > t} by binary search + linear interpolation
    on the stored clock grid."""
    clock = path.clock
    if t < 0 or t >= clock[-1]:
        raise ValueError("natural time %g outside the accumulated clock range "
                         "[0, %g)" % (t, clock[-1]))
    j = int(np.searchsorted(clock, t, side="right"))
    if j == 0:
        return 0.0
    a0, a1 = clock[j - 1], clock[j]
    s0, s1 = path.times[j - 1], path.times[j]
    if a1 <= a0:
        return float(s1)
    return float(s0 + (t - a0) / (a1 - a0) * (s1 - s0))


@dataclass
class ResidualRow:
    dt: float
    residual: float
    se: float
    generator_value: float


def generator_residual(f: Callable, x, config: ModelConfig, dt_values,
                       sample_count: int, rng: RngStream,
                       grad: Optional[Callable] = None,
                       lap: Optional[Callable] = None,
                       convention: str = "two-over-d") -> list:
    """[E f(X_dt) - f(x)]/dt compared with Gf(x) over a dt ladder.

    Derivatives of f default to central finite differences.
    """
    x = np.asarray(x, dtype=float)
    d = config.dimension
    coeffs = DiffusionCoefficients(config, convention)
    r = float(np.linalg.norm(x))
    b = coeffs.drift(x[None, :])[0]
    s2 = float(coeffs.sigma2(r))

    if grad is None or lap is None:
        h = 1e-5 * max(1.0, r)

        def fd_grad(y):
            g = np.empty(d)
            for i in range(d):
                e = np.zeros(d)
                e[i] = h
                g[i] = (f(y + e) - f(y - e)) / (2 * h)
            return g

        def fd_lap(y):
            total = 0.0
            f0 = f(y)
            for i in range(d):
                e = np.zeros(d)
                e[i] = h
                total += (f(y + e) - 2 * f0 + f(y - e)) / (h * h)
            return total

        grad = grad or fd_grad
        lap = lap or fd_lap

    gf = 0.5 * s2 * float(lap(x)) + float(b @ np.asarray(grad(x), dtype=float))
    rows = []
    for i, dt in enumerate(dt_values):
        gen = rng.substream(i).generator()
        xi = gen.standard_normal((sample_count, d))
        x1 = x + b * dt + math.sqrt(s2 * dt) * xi
        vals = np.array([f(row) for row in x1])
        resid = (vals.mean() - f(x)) / dt - gf
        se = vals.std(ddof=1) / (dt * math.sqrt(sample_count))
        rows.append(ResidualRow(float(dt), float(resid), float(se), gf))
    return rows

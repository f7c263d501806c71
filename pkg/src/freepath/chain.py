"""The free-path Markov chain (X_k, T_k, U_k): stepping, whole-chain runs,
trajectory reconstruction, and the band stopping times.

Record k stores the position X_k, the scaled/raw reflection times, and the
direction U_k drawn AT X_k (the launch direction of flight k -> k+1), so a
chain replays exactly from its records.  tau (first reflection index outside
[l, u]) and iota (first continuous-time band exit, which may precede it)
are both available when a band is given.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .collision import sample_directions
from .dynamics import FlightStatus, PathSegment, run_flights
from .errors import ModelError
from .model import ModelConfig
from .numerics.rng import RngStream


class StopReason(str, Enum):
    STEP_BUDGET = "step budget"
    EXITED_BAND = "exited band"
    SLOW_REGION = "slow region error"
    SINGULAR_INFALL = "singular infall error"


@dataclass
class ReflectionRecord:
    index: int
    position: np.ndarray
    t_scaled: float
    t_raw: float
    direction: np.ndarray
    free_time: Optional[float] = None  # duration of the flight leaving here


@dataclass
class StepResult:
    position: np.ndarray
    t_scaled: float
    t_raw: float
    direction: np.ndarray
    free_time: float
    hazard_target: float
    energy_drift: float
    angmom_drift: float


def step(x, t, config: ModelConfig, rng: RngStream) -> StepResult:
    """One chain transition from (x, t): draw U uniform and N by hazard
    inversion; returns the arrival state and the scaled time increment."""
    x = np.asarray(x, dtype=float)
    gen = rng.generator()
    u = sample_directions(gen, 1, config.dimension)[0]
    e = float(-np.log1p(-gen.random()))
    res = run_flights(config, x[None, :], u[None, :], hazard_targets=np.array([e]))
    status = FlightStatus(int(res.status[0]))
    if status != FlightStatus.OK:
        from .errors import SingularInfallError, SlowRegionError
        if status == FlightStatus.SLOW_REGION:
            raise SlowRegionError("chain step hit the slow-region budget")
        raise SingularInfallError("chain step aborted (%s)" % status.name)
    d = config.dimension
    n_scale = config.scaling_n ** -0.75
    duration = float(res.durations[0])
    return StepResult(res.states[0, :d].copy(), t + n_scale * duration,
                      duration, u, duration, e,
                      float(res.energy_drift[0]), float(res.angmom_drift[0]))


@dataclass
class ChainRun:
    """One realized chain with enough data to replay every flight."""

    config: ModelConfig
    positions: np.ndarray       # (K+1, d)
    t_raw: np.ndarray           # (K+1,)
    t_scaled: np.ndarray        # (K+1,)
    directions: np.ndarray      # (K+1, d); row k launches flight k
    free_times: np.ndarray      # (K,)
    hazard_targets: np.ndarray  # (K,)
    energy_drift: np.ndarray    # (K,) per-flight maxima
    angmom_drift: np.ndarray    # (K,)
    stop_reason: StopReason
    band: Optional[tuple] = None
    tau_index: Optional[int] = None
    segments: Optional[list] = None
    replay_cache_size: int = 64
    _cache: OrderedDict = field(default_factory=OrderedDict, repr=False)

    def __len__(self):
        return len(self.free_times)

    def record(self, k: int) -> ReflectionRecord:
        free = float(self.free_times[k]) if k < len(self.free_times) else None
        return ReflectionRecord(k, self.positions[k], float(self.t_scaled[k]),
                                float(self.t_raw[k]), self.directions[k], free)

    def records(self):
        return [self.record(k) for k in range(len(self.positions))]

    def flight_segment(self, k: int) -> PathSegment:
        """Flight k (X_k -> X_{k+1}), re-integrated on demand (LRU cached)."""
        if not 0 <= k < len(self.free_times):
            raise IndexError("flight %d out of range" % k)
        if self.segments is not None:
            return self.segments[k]
        if k in self._cache:
            self._cache.move_to_end(k)
            return self._cache[k]
        res = run_flights(self.config, self.positions[k][None, :],
                          self.directions[k][None, :],
                          durations=float(self.free_times[k]), record=True,
                          radial_bounds=self.band)
        seg = res.segments[0]
        self._cache[k] = seg
        if len(self._cache) > self.replay_cache_size:
            self._cache.popitem(last=False)
        return seg

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for k in range(len(self.positions)):
                rec = {"k": k, "x": [float(v) for v in self.positions[k]],
                       "t_scaled": float(self.t_scaled[k]),
                       "t_raw": float(self.t_raw[k]),
                       "u": [float(v) for v in self.directions[k]]}
                fh.write(json.dumps(rec) + "\n")


def run_chain(x0, config: ModelConfig, step_budget: int, rng: RngStream,
              band: Optional[tuple] = None, store_segments: bool = False) -> ChainRun:
    """Run the chain from x0 until the step budget or the first reflection
    index with |X_k| outside [l, u] (when a band is given)."""
    x0 = np.asarray(x0, dtype=float)
    r0 = float(np.linalg.norm(x0))
    if band is not None:
        l, u = band
        if not (config.domain.lower < l < u < config.domain.upper):
            raise ModelError("band must sit inside the open domain")
    gen = rng.generator()
    d = config.dimension
    n_scale = config.scaling_n ** -0.75

    positions = [x0.copy()]
    t_raw = [0.0]
    directions = []
    free_times = []
    targets = []
    e_drifts = []
    l_drifts = []
    segments = [] if store_segments else None
    stop = StopReason.STEP_BUDGET
    tau_index = None

    if band is not None and not (band[0] <= r0 <= band[1]):
        tau_index = 0
        stop = StopReason.EXITED_BAND
        directions.append(sample_directions(gen, 1, d)[0])
    else:
        x = x0.copy()
        flight_failed = False
        for k in range(step_budget):
            u_dir = sample_directions(gen, 1, d)[0]
            e = float(-np.log1p(-gen.random()))
            res = run_flights(config, x[None, :], u_dir[None, :],
                              hazard_targets=np.array([e]),
                              record=store_segments)
            directions.append(u_dir)
            status = FlightStatus(int(res.status[0]))
            if status != FlightStatus.OK:
                stop = StopReason.SLOW_REGION if status == FlightStatus.SLOW_REGION \
                    else StopReason.SINGULAR_INFALL
                flight_failed = True
                break
            x = res.states[0, :d].copy()
            positions.append(x)
            t_raw.append(t_raw[-1] + float(res.durations[0]))
            free_times.append(float(res.durations[0]))
            targets.append(e)
            e_drifts.append(float(res.energy_drift[0]))
            l_drifts.append(float(res.angmom_drift[0]))
            if store_segments:
                segments.append(res.segments[0])
            if band is not None and not (band[0] <= np.linalg.norm(x) <= band[1]):
                tau_index = k + 1
                stop = StopReason.EXITED_BAND
                break
        else:
            stop = StopReason.STEP_BUDGET
        if not flight_failed:
            # direction drawn at the final position (stationary-start
            # convention gives every record a launch direction)
            directions.append(sample_directions(gen, 1, d)[0])

    pos = np.asarray(positions)
    t_raw = np.asarray(t_raw)
    return ChainRun(config, pos, t_raw, n_scale * t_raw, np.asarray(directions),
                    np.asarray(free_times), np.asarray(targets),
                    np.asarray(e_drifts), np.asarray(l_drifts),
                    stop, band, tau_index, segments)


def interpolated_time_process(run: ChainRun, s: float) -> float:
    """Linear interpolation of the scaled time process at real index s."""
    k_max = len(run.free_times)
    if not 0.0 <= s <= k_max:
        raise ValueError("index %g outside [0, %d]" % (s, k_max))
    k = int(math.floor(s))
    if k == k_max:
        return float(run.t_scaled[k_max])
    frac = s - k
    return float(run.t_scaled[k] + frac * (run.t_scaled[k + 1] - run.t_scaled[k]))


@dataclass
class TrajectorySample:
    times: np.ndarray
    positions: np.ndarray
    iota: Optional[float] = None  # first continuous band exit (raw time)


def continuous_exit_time(run: ChainRun) -> Optional[float]:
    """First raw time with |X(t)| outside the band, scanning flights in
    order via their dense output; None if the path never leaves the band."""
    if run.band is None:
        raise ValueError("run has no band")
    last = len(run.free_times) if run.tau_index is None \
        else min(run.tau_index, len(run.free_times))
    for k in range(last):
        seg = run.flight_segment(k)
        crossing = _segment_band_exit(seg, run.band)
        if not math.isnan(crossing):
            return float(run.t_raw[k] + crossing)
    if run.tau_index is not None and run.tau_index <= len(run.free_times):
        return float(run.t_raw[run.tau_index])
    return None


def _segment_band_exit(seg: PathSegment, band) -> float:
    d = seg.config.dimension
    l, u = band
    ts = seg.sample_times(max(33, 4 * len(seg.t_starts)))
    r = np.linalg.norm(seg.state_at(ts)[:, :d], axis=1)
    out = (r < l) | (r > u)
    if not np.any(out):
        return math.nan
    j = int(np.argmax(out))
    if j == 0:
        return 0.0
    lo, hi = ts[j - 1], ts[j]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        rm = float(np.linalg.norm(seg.state_at(mid)[:d]))
        if l <= rm <= u:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def reconstruct_trajectory(run: ChainRun, times, compute_iota: bool = False) -> TrajectorySample:
    """Positions X^n(t) at raw times t by locating the covering flight
    (binary search over reflection times) and evaluating its dense output."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    horizon = float(run.t_raw[-1])
    if np.any(times < 0) or np.any(times > horizon * (1 + 1e-12)):
        raise ValueError("requested time beyond the run horizon %g" % horizon)
    d = run.config.dimension
    out = np.empty((times.size, d))
    order = np.argsort(times)
    idx = np.clip(np.searchsorted(run.t_raw, times, side="right") - 1, 0,
                  max(len(run.free_times) - 1, 0))
    for j in order:
        k = int(idx[j])
        local = min(times[j] - run.t_raw[k], run.free_times[k]) \
            if len(run.free_times) else 0.0
        if len(run.free_times) == 0:
            out[j] = run.positions[0]
            continue
        seg = run.flight_segment(k)
        out[j] = seg.state_at(float(max(0.0, local)))[:d]
    iota = None
    if compute_iota and run.band is not None:
        iota = continuous_exit_time(run)
    return TrajectorySample(times, out, iota)


@dataclass
class ChainEnsemble:
    """Summary arrays over B independent chains (one row per replica)."""

    count: int
    snapshot_positions: np.ndarray   # X at min(k_target, tau)
    snapshot_t_scaled: np.ndarray
    snapshot_index: np.ndarray
    tau: np.ndarray                  # reflection-index exit (nan: none)
    t_scaled_at_tau: np.ndarray
    k_stop: np.ndarray
    failed: np.ndarray               # bool: slow region / singular flights
    first_free_times: np.ndarray     # duration of flight 0
    first_positions: np.ndarray      # X_1
    first_t_scaled: np.ndarray       # T_1 (scaled)
    max_energy_drift: np.ndarray
    max_angmom_drift: np.ndarray
    total_flights: int


def run_chains(x0, config: ModelConfig, rng: RngStream, n_replicas: int,
               step_budget: int, band: Optional[tuple] = None,
               k_target: Optional[int] = None, chunk: int = 128) -> ChainEnsemble:
    """Run B independent chains in lockstep (vectorized across replicas).

    Each replica draws from its own counter-based substream, so results are
    independent of batching and of how replicas are sharded over workers.
    Chains stop at the band exit or the step budget; the snapshot state at
    min(k_target, tau) is recorded along the way.
    """
    x0 = np.asarray(x0, dtype=float)
    d = config.dimension
    B = n_replicas
    if band is not None:
        l_band, u_band = band
        if not (config.domain.lower < l_band < u_band < config.domain.upper):
            raise ModelError("band must sit inside the open domain")
    n_scale = config.scaling_n ** -0.75

    gens = [rng.substream(i).generator() for i in range(B)]
    norm_buf = np.empty((B, chunk, d))
    unif_buf = np.empty((B, chunk))

    X = np.tile(x0, (B, 1))
    t_raw = np.zeros(B)
    k = np.zeros(B, dtype=int)
    active = np.ones(B, dtype=bool)
    failed = np.zeros(B, dtype=bool)
    tau = np.full(B, np.nan)
    t_tau = np.full(B, np.nan)
    snap_x = np.tile(x0, (B, 1))
    snap_t = np.zeros(B)
    snap_k = np.zeros(B, dtype=int)
    snap_taken = np.zeros(B, dtype=bool)
    first_N = np.full(B, np.nan)
    first_X = np.full((B, d), np.nan)
    first_T = np.full(B, np.nan)
    e_drift = np.zeros(B)
    l_drift = np.zeros(B)
    total_flights = 0

    if band is not None:
        r0 = float(np.linalg.norm(x0))
        if not (l_band <= r0 <= u_band):
            tau[:] = 0.0
            t_tau[:] = 0.0
            snap_taken[:] = True
            active[:] = False

    rounds = 0
    while np.any(active):
        cursor = rounds % chunk
        if cursor == 0:
            for i in np.nonzero(active)[0]:
                norm_buf[i] = gens[i].standard_normal((chunk, d))
                unif_buf[i] = gens[i].random(chunk)
        rows = np.nonzero(active)[0]
        z = norm_buf[rows, cursor]
        norms = np.linalg.norm(z, axis=1)
        bad = norms <= 1e-12
        if np.any(bad):
            z[bad] = 0.0
            z[bad, 0] = 1.0
            norms[bad] = 1.0
        U = z / norms[:, None]
        e = -np.log1p(-unif_buf[rows, cursor])

        res = run_flights(config, X[rows], U, hazard_targets=e)
        total_flights += rows.size
        ok = res.status == FlightStatus.OK

        bad_rows = rows[~ok]
        failed[bad_rows] = True
        active[bad_rows] = False

        good = rows[ok]
        X[good] = res.states[ok][:, :d]
        t_raw[good] += res.durations[ok]
        k[good] += 1
        np.maximum.at(e_drift, good, res.energy_drift[ok])
        np.maximum.at(l_drift, good, res.angmom_drift[ok])

        first = good[k[good] == 1]
        first_N[first] = res.durations[ok][k[good] == 1]
        first_X[first] = X[first]
        first_T[first] = n_scale * t_raw[first]

        if band is not None:
            r_new = np.linalg.norm(X[good], axis=1)
            exited = (r_new < l_band) | (r_new > u_band)
            ex_rows = good[exited]
            tau[ex_rows] = k[ex_rows]
            t_tau[ex_rows] = n_scale * t_raw[ex_rows]
            take = ex_rows[~snap_taken[ex_rows]]
            snap_x[take] = X[take]
            snap_t[take] = n_scale * t_raw[take]
            snap_k[take] = k[take]
            snap_taken[take] = True
            active[ex_rows] = False

        if k_target is not None:
            hit = good[(k[good] == k_target) & ~snap_taken[good]]
            snap_x[hit] = X[hit]
            snap_t[hit] = n_scale * t_raw[hit]
            snap_k[hit] = k[hit]
            snap_taken[hit] = True

        budget_rows = good[k[good] >= step_budget]
        active[budget_rows] = False
        rounds += 1

    # replicas that never exited nor reached k_target snapshot at their stop
    rest = ~snap_taken
    snap_x[rest] = X[rest]
    snap_t[rest] = n_scale * t_raw[rest]
    snap_k[rest] = k[rest]

    return ChainEnsemble(B, snap_x, snap_t, snap_k, tau, t_tau, k,
                         failed, first_N, first_X, first_T,
                         e_drift, l_drift, total_flights)

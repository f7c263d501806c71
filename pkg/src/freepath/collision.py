"""Reflection sampling: uniform directions on the sphere and exact free
flight durations via hazard inversion.

The duration N solves F_n(N) = e with e ~ Exp(1), where F_n is the
cumulative hazard co-integrated along the trajectory; the crossing is
located by bisection on the integrator's dense output.  Inversion needs no
per-potential hazard bounds, unlike thinning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import dynamics
from .dynamics import FlightStatus, PathSegment, run_flights
from .errors import SingularInfallError, SlowRegionError
from .model import ModelConfig, hazard_rate, speed
from .numerics.rng import RngStream


def sample_direction(rng, d: int) -> np.ndarray:
    """One uniform unit vector in R^d (normalized Gaussian)."""
    if d < 2:
        raise ValueError("dimension must be >= 2")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    while True:
        z = gen.standard_normal(d)
        norm = np.linalg.norm(z)
        if norm > 1e-12:
            return z / norm


def sample_directions(gen: np.random.Generator, count: int, d: int) -> np.ndarray:
    """Batch of uniform unit vectors; degenerate draws (norm ~ 0) fall back
    to the first axis, which is unreachable in practice."""
    z = gen.standard_normal((count, d))
    norms = np.linalg.norm(z, axis=1)
    bad = norms <= 1e-12
    if np.any(bad):
        z[bad] = 0.0
        z[bad, 0] = 1.0
        norms[bad] = 1.0
    return z / norms[:, None]


@dataclass
class FreeTimeSample:
    duration: float
    hazard_target: float
    segment: Optional[PathSegment]
    energy_drift: float
    angmom_drift: float


def sample_free_time(x, u, config: ModelConfig, rng: RngStream,
                     record: bool = True, t_max: Optional[float] = None) -> FreeTimeSample:
    """Draw one free flight duration from position x along direction u.

    Returns the duration and (optionally) the dense flight segment truncated
    at the reflection.  Raises SlowRegionError when the hazard target is not
    reached within the time budget and SingularInfallError on radial infall
    into a singular origin.
    """
    e = float(rng.exponential())
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    res = run_flights(config, x[None, :], u[None, :],
                      hazard_targets=np.array([e]), record=record, t_max=t_max)
    status = FlightStatus(int(res.status[0]))
    if status == FlightStatus.SLOW_REGION:
        raise SlowRegionError("hazard target not reached within t_max=%g "
                              "(particle loitering in a slow region)" %
                              (t_max or config.options.t_max),
                              elapsed=float(res.durations[0]),
                              hazard=float(res.hazards(config.dimension)[0]))
    if status == FlightStatus.SINGULAR_INFALL:
        raise SingularInfallError("singular infall before hazard target")
    if status == FlightStatus.STEP_UNDERFLOW:
        raise SingularInfallError("step underflow before hazard target")
    return FreeTimeSample(float(res.durations[0]), e,
                          res.segments[0] if record else None,
                          float(res.energy_drift[0]), float(res.angmom_drift[0]))


def sample_free_times_batch(config: ModelConfig, x0, u0, targets,
                            t_max: Optional[float] = None) -> dynamics.FlightResult:
    """Batched hazard-inversion flights (shared with the chain engine)."""
    return run_flights(config, x0, u0, hazard_targets=np.asarray(targets, dtype=float),
                       t_max=t_max)


@dataclass
class MomentEstimate:
    value: float
    se: float
    limit: float
    order: int
    count: int
    failures: int


def free_time_moment(x, u, config: ModelConfig, p: int, sample_count: int,
                     rng: RngStream) -> MomentEstimate:
    """Monte Carlo estimate of E[(n^{1/4} N)^p] with its exponential limit
    p! / (g(r0) v(r0))^p."""
    if p < 1:
        raise ValueError("moment order must be >= 1")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    e = rng.exponential(sample_count)
    res = sample_free_times_batch(config, np.tile(x, (sample_count, 1)),
                                  np.tile(u, (sample_count, 1)), e)
    ok = res.status == FlightStatus.OK
    scaled = config.scaling_n ** 0.25 * res.durations[ok]
    values = scaled ** p
    r0 = float(np.linalg.norm(x))
    rate = float(config.g(r0)) * float(speed(config, r0))
    limit = math.factorial(p) / rate ** p
    return MomentEstimate(float(np.mean(values)),
                          float(np.std(values, ddof=1) / math.sqrt(values.size)),
                          limit, p, int(values.size), int(np.sum(~ok)))


@dataclass
class TailEstimate:
    estimate: float
    wilson_low: float
    wilson_high: float
    hazard_at_eps: float
    count: int


def tail_probability(x, u, config: ModelConfig, eps: float, sample_count: int,
                     rng: RngStream, z: float = 1.96) -> TailEstimate:
    """Monte Carlo estimate of P(N >= eps) with a Wilson interval.

    Uses the inversion identity {N >= eps} = {e >= F_n(eps)}: the cumulative
    hazard to time eps is integrated once along the (deterministic) flight
    from (x, u), and compared against Exp(1) draws.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    res = run_flights(config, x[None, :], u[None, :], durations=float(eps))
    if FlightStatus(int(res.status[0])) != FlightStatus.OK:
        raise SingularInfallError("flight aborted before time eps")
    f_eps = float(res.hazards(config.dimension)[0])
    e = rng.exponential(sample_count)
    k = int(np.sum(e >= f_eps))
    n = sample_count
    p_hat = k / n
    denom = 1.0 + z * z / n
    center = (p_hat + z * z / (2 * n)) / denom
    half = z * math.sqrt(p_hat * (1 - p_hat) / n + z * z / (4 * n * n)) / denom
    return TailEstimate(p_hat, max(0.0, center - half), min(1.0, center + half),
                        f_eps, n)


def hazard_rate_at(config: ModelConfig, r) -> float:
    """Convenience alias for the energy-surface hazard g_n v_n at radius r."""
    return hazard_rate(config, r)

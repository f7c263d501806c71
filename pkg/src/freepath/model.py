"""Model definition: radial potentials, scatterer densities, the energy
surface and its domain, the speed field, and the scaling family.

The scaling family with index n replaces (g, U, E) by (sqrt(n) g, U/sqrt(n),
E/sqrt(n)); the speed field then scales as v_n = n**-0.25 v and the
reflection hazard along a trajectory is g_n * v_n = n**0.25 * g * v.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ModelError
from .expressions import Expression, check_derivative_consistency
from .numerics.roots import bracket_root


class EndpointKind(str, Enum):
    WALL = "wall"          # zero-speed wall: U(h) = E, force pointing inward
    ORIGIN = "origin"      # h_- = 0
    INFINITY = "infinity"  # h_+ = +inf
    EDGE = "edge"          # search-interval edge, no physical bound found


@dataclass(frozen=True)
class PotentialSpec:
    """Radial potential U(r) with its analytic derivative."""

    kind: str
    params: tuple
    evaluator: Callable = field(repr=False)
    derivative: Callable = field(repr=False)

    @classmethod
    def free(cls):
        return cls("free", (), lambda r: np.zeros_like(np.asarray(r, dtype=float)),
                   lambda r: np.zeros_like(np.asarray(r, dtype=float)))

    @classmethod
    def constant_force(cls, c: float):
        return cls("constant-force", (c,), lambda r: c * np.asarray(r, dtype=float),
                   lambda r: np.full_like(np.asarray(r, dtype=float), c))

    @classmethod
    def newtonian(cls, k: float):
        if k <= 0:
            raise ConfigError("newtonian potential needs k > 0")
        return cls("newtonian", (k,), lambda r: -k / np.asarray(r, dtype=float),
                   lambda r: k / np.asarray(r, dtype=float) ** 2)

    @classmethod
    def harmonic(cls, a: float):
        return cls("harmonic", (a,), lambda r: a * np.asarray(r, dtype=float) ** 2,
                   lambda r: 2.0 * a * np.asarray(r, dtype=float))

    @classmethod
    def from_expression(cls, text: str):
        expr = Expression(text)
        dexpr = expr.derivative()
        return cls("expression", (text,), expr, dexpr)

    def singular_at_origin(self) -> bool:
        probe = self.evaluator(1e-12)
        return not np.isfinite(probe) or abs(float(probe)) > 1e9


@dataclass(frozen=True)
class DensitySpec:
    """Scatterer density g(r) > 0 with its derivative."""

    kind: str
    params: tuple
    evaluator: Callable = field(repr=False)
    derivative: Callable = field(repr=False)

    @classmethod
    def constant(cls, value: float = 1.0):
        if value <= 0:
            raise ConfigError("density must be positive")
        return cls("constant", (value,),
                   lambda r: np.full_like(np.asarray(r, dtype=float), value),
                   lambda r: np.zeros_like(np.asarray(r, dtype=float)))

    @classmethod
    def affine(cls, base: float, slope: float):
        return cls("affine", (base, slope),
                   lambda r: base + slope * np.asarray(r, dtype=float),
                   lambda r: np.full_like(np.asarray(r, dtype=float), slope))

    @classmethod
    def from_expression(cls, text: str):
        expr = Expression(text)
        return cls("expression", (text,), expr, expr.derivative())


@dataclass(frozen=True)
class Domain:
    """Radial domain [lower, upper] with classified endpoints."""

    lower: float
    upper: float
    lower_kind: EndpointKind
    upper_kind: EndpointKind
    truncated: bool = False

    def __post_init__(self):
        if not (self.lower < self.upper):
            raise ConfigError("domain needs lower < upper")
        if self.lower < 0:
            raise ConfigError("radial domain cannot extend below 0")

    @property
    def finite_upper(self) -> bool:
        return math.isfinite(self.upper)

    def contains_interior(self, r, slack=0.0):
        r = np.asarray(r, dtype=float)
        return (r > self.lower - slack) & (r < self.upper + slack)


@dataclass(frozen=True)
class NumericsOptions:
    """Exposed numerical knobs (the model itself fixes none of these)."""

    rtol: float = 1e-10
    atol: float = 1e-10
    origin_exclusion: Optional[float] = None   # default resolves to 1e-6 * scale
    epsilon_origin_factor: float = 1e-9        # origin-event radius, * scale
    v_cap: float = 1e9                         # singular-infall speed cap
    t_max: float = 1e6                         # slow-region flight budget
    grid_points: int = 10_000
    r_max: float = 1e3                         # truncation for infinite domains
    event_time_tol: float = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    """Full parameterization: potential, density, mass, energy, dimension,
    scaling index n, and the radial domain."""

    potential: PotentialSpec
    density: DensitySpec
    mass: float
    energy: float
    domain: Domain
    dimension: int = 3
    scaling_n: float = 1.0
    options: NumericsOptions = field(default_factory=NumericsOptions)

    def __post_init__(self):
        if self.mass <= 0:
            raise ConfigError("mass must be positive")
        if self.dimension < 2:
            raise ConfigError("dimension must be >= 2")
        if self.scaling_n <= 0:
            raise ConfigError("scaling index n must be positive")

    # -- unscaled fields -----------------------------------------------------

    def u(self, r):
        return self.potential.evaluator(r)

    def du(self, r):
        return self.potential.derivative(r)

    def g(self, r):
        return self.density.evaluator(r)

    def dg(self, r):
        return self.density.derivative(r)

    # -- scaled fields (A1 family) --------------------------------------------

    @property
    def energy_n(self):
        return self.energy / math.sqrt(self.scaling_n)

    def u_n(self, r):
        return self.u(r) / math.sqrt(self.scaling_n)

    def du_n(self, r):
        return self.du(r) / math.sqrt(self.scaling_n)

    def g_n(self, r):
        return math.sqrt(self.scaling_n) * self.g(r)

    def with_scaling(self, n: float) -> "ModelConfig":
        return replace(self, scaling_n=float(n))

    def with_options(self, **kwargs) -> "ModelConfig":
        return replace(self, options=replace(self.options, **kwargs))

    def length_scale(self) -> float:
        if self.domain.finite_upper:
            return self.domain.upper
        return max(1.0, self.domain.lower + 1.0)

    def origin_exclusion(self) -> float:
        if self.options.origin_exclusion is not None:
            return self.options.origin_exclusion
        return 1e-6 * self.length_scale()

    def grid(self, n_points: Optional[int] = None) -> np.ndarray:
        """Validation grid over the domain interior (log-spaced to r_max when
        the upper endpoint is infinite)."""
        n_points = n_points or self.options.grid_points
        lo = self.domain.lower
        eps = self.origin_exclusion() if lo == 0.0 else 1e-9 * self.length_scale()
        lo = lo + eps
        if self.domain.finite_upper:
            hi = self.domain.upper - 1e-9 * self.length_scale()
            return np.linspace(lo, hi, n_points)
        hi = max(self.options.r_max, 10.0 * lo)
        return np.geomspace(lo, hi, n_points)


def speed(config: ModelConfig, r):
    """Unscaled speed v(r) = sqrt(2 (E - U(r)) / m) on the energy surface."""
    r_arr = np.asarray(r, dtype=float)
    slack = 1e-12 * config.length_scale()
    inside = (r_arr >= config.domain.lower - slack) & (r_arr <= config.domain.upper + slack)
    if not np.all(inside):
        raise ModelError("radius outside the domain [%g, %g]" %
                         (config.domain.lower, config.domain.upper))
    gap = config.energy - config.u(r_arr)
    if np.any(gap < -1e-12 * max(1.0, abs(config.energy))):
        raise ModelError("E - U(r) < 0: assumption (A2) violated at r=%s" %
                         np.asarray(r_arr)[np.asarray(gap) < 0])
    out = np.sqrt(2.0 * np.maximum(gap, 0.0) / config.mass)
    return out if np.ndim(r) else float(out)


def scaled_speed(config: ModelConfig, r):
    """v_n(r) = n**-0.25 * v(r)."""
    return config.scaling_n ** -0.25 * speed(config, r)


def hazard_rate(config: ModelConfig, r):
    """Reflection hazard along the energy surface: g_n v_n = n**0.25 g v."""
    return config.scaling_n ** 0.25 * config.g(r) * speed(config, r)


def domain_from_potential(potential: PotentialSpec, energy: float, mass: float,
                          search_interval=(0.0, 1e8), seed: Optional[float] = None,
                          wall_tol: float = 1e-12,
                          infinity_threshold: float = 1e6) -> Domain:
    """Locate the maximal interval around a seed point where E - U > 0.

    Zero-speed walls are found by bracketed root-finding on E - U(r) = 0 to
    absolute tolerance ``wall_tol``; endpoints are classified as origin, wall,
    or infinity.  If no wall exists within the search interval and its edge is
    below ``infinity_threshold``, the domain is flagged truncated.
    """
    lo_s, hi_s = float(search_interval[0]), float(search_interval[1])
    if not (0.0 <= lo_s < hi_s):
        raise ConfigError("bad search interval")

    def gap(r):
        val = potential.evaluator(r)
        return energy - float(val)

    probe_lo = max(lo_s, 1e-12 * max(1.0, hi_s if math.isfinite(hi_s) else 1.0))
    grid = np.geomspace(max(probe_lo, 1e-12), hi_s, 512)
    if seed is None:
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            vals = energy - np.asarray(potential.evaluator(grid), dtype=float)
        finite = np.isfinite(vals)
        if not np.any(finite & (vals > 0)):
            raise ModelError("E <= U everywhere on the search interval")
        seed = float(grid[finite][np.argmax(vals[finite])])
    if gap(seed) <= 0:
        raise ModelError("seed point has E - U <= 0")

    truncated = False

    # upper endpoint
    scan = np.geomspace(seed, hi_s, 256)
    upper = None
    prev = seed
    for r in scan[1:]:
        if gap(r) <= 0.0:
            upper = bracket_root(lambda x: gap(x), prev, float(r), xtol=wall_tol)
            upper_kind = EndpointKind.WALL
            break
        prev = float(r)
    if upper is None:
        if hi_s >= infinity_threshold:
            upper, upper_kind = math.inf, EndpointKind.INFINITY
        else:
            upper, upper_kind = hi_s, EndpointKind.EDGE
            truncated = True

    # lower endpoint
    lower = None
    floor = max(lo_s, 1e-14 * max(1.0, seed))
    scan = np.geomspace(seed, floor, 256) if floor > 0 else np.linspace(seed, lo_s, 256)
    prev = seed
    for r in scan[1:]:
        val = gap(float(r))
        if not math.isfinite(val):
            # singular origin (e.g. -k/r): E - U -> +inf, no lower wall
            break
        if val <= 0.0:
            lower = bracket_root(lambda x: gap(x), float(r), prev, xtol=wall_tol)
            lower_kind = EndpointKind.WALL
            break
        prev = float(r)
    if lower is None:
        if lo_s == 0.0:
            lower, lower_kind = 0.0, EndpointKind.ORIGIN
        else:
            lower, lower_kind = lo_s, EndpointKind.EDGE
            truncated = True

    return Domain(lower, upper, lower_kind, upper_kind, truncated)


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    detail: str
    witness: Optional[float] = None


@dataclass
class AssumptionReport:
    checks: list

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def __str__(self):
        lines = []
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            extra = "" if c.witness is None else " (witness r=%g)" % c.witness
            lines.append("%s %-4s %s%s" % (mark, c.name, c.detail, extra))
        return "\n".join(lines)


def validate_assumptions(config: ModelConfig, grid_points: Optional[int] = None) -> AssumptionReport:
    """Grid-check the standing assumptions; failures carry a witness point."""
    checks = []
    grid = config.grid(grid_points)
    scale = config.length_scale()

    # (A1) scaling identities, checked as evaluated
    sample = grid[:: max(1, len(grid) // 16)]
    n = config.scaling_n
    v = speed(config, sample)
    lhs = config.g_n(sample) * (n ** -0.25 * v)
    rhs = n ** 0.25 * config.g(sample) * v
    ok = np.allclose(lhs, rhs, rtol=1e-12, atol=1e-300)
    checks.append(AssumptionCheck("A1", bool(ok), "scaled hazard g_n*v_n = n^(1/4)*g*v"))

    # (A2) positivity of E - U on the interior grid
    gapv = config.energy - np.asarray(config.u(grid), dtype=float)
    bad = np.where(~(gapv > 0))[0]
    if bad.size:
        checks.append(AssumptionCheck("A2", False, "E - U(r) <= 0 on interior grid",
                                      float(grid[bad[0]])))
    else:
        checks.append(AssumptionCheck("A2", True, "E - U(r) > 0 on interior grid"))

    # (A3) boundary conditions
    a3_ok, a3_detail, a3_witness = True, [], None
    dom = config.domain
    wall_tol = 1e-9 * max(1.0, abs(config.energy))
    if dom.lower_kind == EndpointKind.WALL:
        u_lo = float(config.u(dom.lower))
        f_lo = -float(config.du(dom.lower))
        if abs(u_lo - config.energy) > wall_tol or f_lo <= 0:
            a3_ok, a3_witness = False, dom.lower
            a3_detail.append("lower wall: U(h-)=E and inward force required")
    elif dom.lower_kind == EndpointKind.ORIGIN:
        probe = config.origin_exclusion()
        if not (config.energy - float(config.u(probe)) > 0):
            a3_ok, a3_witness = False, probe
            a3_detail.append("E - U(0+) must be positive")
    if dom.upper_kind == EndpointKind.WALL:
        u_hi = float(config.u(dom.upper))
        f_hi = -float(config.du(dom.upper))
        if abs(u_hi - config.energy) > wall_tol or f_hi >= 0:
            a3_ok, a3_witness = False, dom.upper
            a3_detail.append("upper wall: U(h+)=E and inward force required")
    elif dom.upper_kind == EndpointKind.INFINITY:
        tail = grid[grid >= dom.lower + 0.01 * scale]
        inf_gap = np.min(config.energy - np.asarray(config.u(tail), dtype=float))
        if not inf_gap > 0:
            a3_ok = False
            a3_witness = float(tail[np.argmin(config.energy - np.asarray(config.u(tail)))])
            a3_detail.append("inf(E - U) on [h-+eps, inf) must be positive")
    checks.append(AssumptionCheck("A3", a3_ok,
                                  "; ".join(a3_detail) or "boundary conditions hold",
                                  a3_witness))

    # (A4) U continuously differentiable (finite-difference consistency)
    pts = grid[:: max(1, len(grid) // 100)]
    ok, witness, err = check_derivative_consistency(
        lambda r: float(config.u(r)), lambda r: float(config.du(r)), pts)
    checks.append(AssumptionCheck(
        "A4", ok, "dU/dr consistent with U (max rel err %.2e)" % err, witness if not ok else None))

    # (A5) density positive and C1
    gv = np.asarray(config.g(grid), dtype=float)
    g_inf = float(np.min(gv))
    if not g_inf > 0:
        checks.append(AssumptionCheck("A5", False, "inf g = %g on grid" % g_inf,
                                      float(grid[int(np.argmin(gv))])))
    else:
        ok, witness, err = check_derivative_consistency(
            lambda r: float(config.g(r)), lambda r: float(config.dg(r)), pts)
        checks.append(AssumptionCheck(
            "A5", ok, "g > 0 (inf %.3g) and dg/dr consistent (max rel err %.2e)" % (g_inf, err),
            witness if not ok else None))

    return AssumptionReport(checks)

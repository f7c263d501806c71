"""Scale function, speed measure, and Feller accessibility classification
for the limiting radial diffusion.

With radial drift mu_r = b_r + (d-1) sigma^2/(2r) and sigma_r^2 = 2/(d g^2),
the scale density works out to

    s'(y) = C * g(y) / (y^(d-1) * (E - U(y))^((d-1)/2)),

normalized so s'(a) = 1, and the speed density is m'(y) = 2/(sigma_r^2 s').
An endpoint is accessible iff the Feller integral
integral_e^x (integral_y^x m') s' dy is finite; a divergent scale limit
already forces inaccessibility.  A third prong fits the local exponent
alpha of s' near the endpoint: alpha >= 1 certifies divergence of the scale
integral, and alpha < 1 certifies accessibility provided the speed density
stays bounded near the endpoint (true at finite endpoints here, not after
the 1/w compactification of an infinite one).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ModelError
from .model import EndpointKind, ModelConfig
from .numerics.quadrature import integrate_adaptive

GROWTH_CAP = 1e12
N_SHELLS = 44
RATIO_DIVERGENT = 0.97
RATIO_CONVERGENT = 0.95


def _anchor(config: ModelConfig) -> float:
    dom = config.domain
    if dom.finite_upper:
        return 0.5 * (dom.lower + dom.upper)
    return dom.lower + max(1.0, dom.lower)


@dataclass
class ScaleSpeed:
    """Scale/speed densities with reference points a (normalization) and c
    (scale-function origin)."""

    config: ModelConfig
    a: float
    c: float
    prefactor: float = field(init=False)

    def __post_init__(self):
        dom = self.config.domain
        for p in (self.a, self.c):
            if not (dom.lower < p < dom.upper):
                raise ModelError("reference point %g outside the open domain" % p)
        self.prefactor = 1.0 / float(self._raw_density(self.a))

    @classmethod
    def from_config(cls, config: ModelConfig, a: Optional[float] = None,
                    c: Optional[float] = None) -> "ScaleSpeed":
        anchor = _anchor(config)
        return cls(config, anchor if a is None else a, anchor if c is None else c)

    def _raw_density(self, y):
        cfg = self.config
        y = np.asarray(y, dtype=float)
        d = cfg.dimension
        gap = cfg.energy - np.asarray(cfg.u(y), dtype=float)
        return np.asarray(cfg.g(y), dtype=float) / \
            (y ** (d - 1) * gap ** (0.5 * (d - 1)))

    def s_prime(self, y):
        return self.prefactor * self._raw_density(y)

    def sigma_r2(self, y):
        cfg = self.config
        g = np.asarray(cfg.g(y), dtype=float)
        return 2.0 / (cfg.dimension * g * g)

    def m_prime(self, y):
        return 2.0 / (self.sigma_r2(y) * self.s_prime(y))

    def drift_integral(self, y, tol=1e-10):
        """B(y) = integral_a^y 2 mu_r / sigma_r^2; satisfies s' = exp(-B)."""
        cfg = self.config
        d = cfg.dimension

        def integrand(rho):
            g = float(cfg.g(rho))
            dg = float(cfg.dg(rho))
            du = float(cfg.du(rho))
            gap = cfg.energy - float(cfg.u(rho))
            return (d - 1) / rho - dg / g - (d - 1) * du / (2.0 * gap)

        return integrate_adaptive(integrand, self.a, float(y), tol).value

    def scale(self, x, tol=1e-10) -> float:
        """s(x) = integral_c^x s'(y) dy by adaptive quadrature."""
        return integrate_adaptive(lambda y: float(self.s_prime(y)),
                                  self.c, float(x), tol).value


def scale_function(config: ModelConfig, x, a: Optional[float] = None,
                   c: Optional[float] = None, tol: float = 1e-10) -> float:
    """s(x); returns a signed-infinity sentinel when x is an endpoint where
    the scale integral diverges."""
    ss = ScaleSpeed.from_config(config, a, c)
    dom = config.domain
    x = float(x)
    if x <= dom.lower or x >= dom.upper:
        side = "lower" if x <= dom.lower else "upper"
        probe = _scale_probe(ss, side)
        if probe.diverges or probe.diverges is None:
            return -math.inf if side == "lower" else math.inf
        anchor_val = ss.scale(probe.start)
        return anchor_val + (-probe.total if side == "lower" else probe.total)
    return ss.scale(x, tol)


def speed_density(config: ModelConfig, x, a: Optional[float] = None) -> float:
    """m'(x) in closed form; m' s' sigma_r^2 / 2 = 1 by construction."""
    dom = config.domain
    x = float(x)
    if not (dom.lower < x < dom.upper):
        raise ModelError("speed density is defined on the open domain only")
    return float(ScaleSpeed.from_config(config, a).m_prime(x))


@dataclass
class _Probe:
    start: float
    total: float
    shell_sums: np.ndarray
    distances: np.ndarray
    diverges: Optional[bool]  # None = numerically inconclusive
    tail: float = 0.0


def _geometric_probe(f: Callable, endpoint: float, start: float,
                     n_shells: int = N_SHELLS) -> _Probe:
    """Integrate f over geometric shells approaching the endpoint.

    Shell j covers distances [delta 2^-j, delta 2^-(j-1)] from the endpoint,
    with delta = |start - endpoint|.  Divergence is declared when the partial
    sums blow past the growth cap or the shell sums fail to decay (Cauchy
    test); convergence when they decay geometrically, with the tail
    extrapolated from the observed ratio.
    """
    delta = abs(start - endpoint)
    sign = 1.0 if start > endpoint else -1.0
    sums = []
    dists = []
    total = 0.0
    diverges = None
    for j in range(1, n_shells + 1):
        lo_d, hi_d = delta * 2.0 ** -j, delta * 2.0 ** -(j - 1)
        a = endpoint + sign * lo_d
        b = endpoint + sign * hi_d
        res = integrate_adaptive(f, min(a, b), max(a, b), tol=1e-11, rel_tol=1e-8)
        sums.append(res.value)
        dists.append(math.sqrt(lo_d * hi_d))
        total += res.value
        if not math.isfinite(total) or total > GROWTH_CAP:
            diverges = True
            break
    sums = np.asarray(sums)
    dists = np.asarray(dists)
    tail = 0.0
    if diverges is None and len(sums) >= 8:
        diverges, tail = _ratio_verdict(sums)
    return _Probe(start, total + tail, sums, dists, diverges, tail)


def _ratio_verdict(sums):
    """Cauchy test on geometric shell sums: decaying => convergent (with a
    geometric tail extrapolation), non-decaying => divergent."""
    recent = np.asarray(sums[-6:], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = recent[1:] / recent[:-1]
    ratios = ratios[np.isfinite(ratios)]
    if ratios.size == 0 or np.max(recent) <= 1e-300:
        return False, 0.0
    r_med = float(np.median(ratios))
    if r_med >= RATIO_DIVERGENT:
        return True, 0.0
    if r_med <= RATIO_CONVERGENT:
        return False, float(recent[-1]) * r_med / max(1e-12, (1.0 - r_med))
    return None, 0.0


def _scale_probe(ss: ScaleSpeed, side: str) -> _Probe:
    cfg = ss.config
    dom = cfg.domain
    anchor = _anchor(cfg)
    if side == "lower":
        return _geometric_probe(lambda y: float(ss.s_prime(y)), dom.lower, anchor)
    if dom.finite_upper:
        return _geometric_probe(lambda y: float(ss.s_prime(y)), dom.upper, anchor)
    # compactify y = 1/w; the scale density transforms with the 1/w^2 Jacobian
    return _geometric_probe(lambda w: float(ss.s_prime(1.0 / w)) / w ** 2,
                            0.0, 1.0 / anchor)


def _feller_probe(ss: ScaleSpeed, side: str) -> _Probe:
    """Shell-wise evaluation of integral (integral_y^x m') s' dy toward the
    endpoint.

    Within each geometric shell both densities vary by a bounded factor, so
    a composite Simpson rule on a geometric node grid is accurate; the inner
    integral telescopes across shells (it is the cumulative m-mass from y
    out to the anchor).  Partial sums blowing past the growth cap or failing
    the Cauchy ratio test declare divergence.
    """
    cfg = ss.config
    dom = cfg.domain
    anchor = _anchor(cfg)
    if side == "lower":
        endpoint, start = dom.lower, anchor
        sp = lambda y: np.asarray(ss.s_prime(y), dtype=float)
        mp = lambda y: np.asarray(ss.m_prime(y), dtype=float)
    elif dom.finite_upper:
        endpoint, start = dom.upper, anchor
        sp = lambda y: np.asarray(ss.s_prime(y), dtype=float)
        mp = lambda y: np.asarray(ss.m_prime(y), dtype=float)
    else:
        endpoint, start = 0.0, 1.0 / anchor
        sp = lambda w: np.asarray(ss.s_prime(1.0 / w), dtype=float) / w ** 2
        mp = lambda w: np.asarray(ss.m_prime(1.0 / w), dtype=float) / w ** 2

    delta = abs(start - endpoint)
    sign = 1.0 if start > endpoint else -1.0
    n_panels = 64
    sums = []
    dists = []
    total = 0.0
    inner_acc = 0.0  # m-mass from the current shell's outer edge to the anchor
    diverges = None
    for j in range(1, N_SHELLS + 1):
        lo_d, hi_d = delta * 2.0 ** -j, delta * 2.0 ** -(j - 1)
        # nodes ordered from the outer edge (near anchor) toward the endpoint
        d_nodes = np.geomspace(hi_d, lo_d, 2 * n_panels + 1)
        y = endpoint + sign * d_nodes
        m_vals = mp(y)
        s_vals = sp(y)
        if not (np.all(np.isfinite(m_vals)) and np.all(np.isfinite(s_vals))):
            diverges = True
            break
        widths = np.abs(np.diff(y[::2]))
        # Simpson panel masses of m' (nodes at panel ends and midpoints)
        m_mass = widths * (m_vals[:-2:2] + 4.0 * m_vals[1::2] + m_vals[2::2]) / 6.0
        # cumulative m-mass from node 2i back to the outer edge
        m_cum = np.concatenate([[0.0], np.cumsum(m_mass)])
        inner_even = inner_acc + m_cum                      # at even nodes
        inner_mid = inner_acc + 0.5 * (m_cum[:-1] + m_cum[1:])  # midpoint approx
        fm_even = s_vals[::2] * inner_even
        fm_mid = s_vals[1::2] * inner_mid
        shell = float(np.sum(widths * (fm_even[:-1] + 4.0 * fm_mid + fm_even[1:]) / 6.0))
        sums.append(shell)
        dists.append(math.sqrt(lo_d * hi_d))
        total += shell
        inner_acc += float(m_cum[-1])
        if not math.isfinite(total) or total > GROWTH_CAP or inner_acc > GROWTH_CAP:
            diverges = True
            break
    sums = np.asarray(sums)
    dists = np.asarray(dists)
    tail = 0.0
    if diverges is None and len(sums) >= 8:
        diverges, tail = _ratio_verdict(sums)
        if diverges is False and inner_acc > 0:
            # convergent outer shells require the full inner mass; if the
            # m-mass itself keeps growing toward the endpoint the double
            # integral still diverges
            m_probe = mp(endpoint + sign * dists[-1])
            if not np.isfinite(m_probe):
                diverges = True
    return _Probe(start, total + tail, sums, dists, diverges, tail)


def _alpha_fit(probe: _Probe, ss: ScaleSpeed, side: str):
    """Local exponent of the scale density over the last two decades of the
    probe mesh, plus whether the speed density stays bounded there."""
    cfg = ss.config
    dom = cfg.domain
    if side == "lower":
        to_y = lambda d: dom.lower + d
        transform = False
    elif dom.finite_upper:
        to_y = lambda d: dom.upper - d
        transform = False
    else:
        to_y = lambda d: d  # distances ARE w values after compactification
        transform = True

    dists = probe.distances
    if dists.size < 8:
        return None, False
    d_min = dists.min()
    mask = (dists >= d_min) & (dists <= 120.0 * d_min)
    pts = dists[mask]
    if pts.size < 4:
        return None, False
    if transform:
        vals = np.array([float(ss.s_prime(1.0 / w)) / w ** 2 for w in pts])
        m_vals = np.array([float(ss.m_prime(1.0 / w)) / w ** 2 for w in pts])
        m_ref = float(ss.m_prime(1.0 / probe.start)) / probe.start ** 2
    else:
        ys = np.array([to_y(dd) for dd in pts])
        vals = np.array([float(ss.s_prime(y)) for y in ys])
        m_vals = np.array([float(ss.m_prime(y)) for y in ys])
        m_ref = float(ss.m_prime(to_y(probe.distances.max())))
    good = np.isfinite(vals) & (vals > 0)
    if np.sum(good) < 4:
        return None, False
    slope = np.polyfit(np.log(pts[good]), np.log(vals[good]), 1)[0]
    alpha = -float(slope)
    m_bounded = bool(np.all(np.isfinite(m_vals)) and
                     np.max(m_vals) <= 1e3 * (abs(m_ref) + 1e-300))
    return alpha, m_bounded


@dataclass
class EndpointReport:
    endpoint: float
    side: str
    scale_limit: Optional[float]      # signed infinity when divergent
    scale_diverges: Optional[bool]
    feller_integral: Optional[float]  # +inf when divergent
    feller_diverges: Optional[bool]
    alpha: Optional[float]
    alpha_applicable: bool
    classification: str               # accessible | inaccessible | inconclusive
    notes: list = field(default_factory=list)

    def to_dict(self):
        def clean(v):
            if v is None:
                return None
            if isinstance(v, float) and math.isinf(v):
                return "inf" if v > 0 else "-inf"
            return v
        return {"endpoint": clean(self.endpoint), "side": self.side,
                "scale_limit": clean(self.scale_limit),
                "feller_integral": clean(self.feller_integral),
                "alpha": self.alpha, "classification": self.classification,
                "notes": list(self.notes)}


@dataclass
class BoundaryReport:
    lower: EndpointReport
    upper: EndpointReport

    def to_json(self, path=None):
        payload = {"lower": self.lower.to_dict(), "upper": self.upper.to_dict()}
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def classify_boundary(config: ModelConfig, side: str,
                      a: Optional[float] = None) -> EndpointReport:
    """Three-pronged accessibility decision for one endpoint.

    Prongs: (1) divergence of the scale integral toward the endpoint;
    (2) the Feller accessibility integral (the definition); (3) the fitted
    local exponent of the scale density (alpha >= 1 inaccessible, alpha < 1
    accessible while the speed density stays bounded).  A confirmed divergent
    scale limit forces "inaccessible"; otherwise agreement decides, the
    alpha prong tie-breaks when |alpha - 1| > 0.1, and anything else is
    "inconclusive".
    """
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    ss = ScaleSpeed.from_config(config, a)
    dom = config.domain
    endpoint = dom.lower if side == "lower" else dom.upper
    notes = []

    scale_probe = _scale_probe(ss, side)
    feller_probe = _feller_probe(ss, side)
    alpha, m_bounded = _alpha_fit(scale_probe, ss, side)

    if scale_probe.diverges is True:
        scale_limit = -math.inf if side == "lower" else math.inf
    elif scale_probe.diverges is False:
        base = ss.scale(scale_probe.start)
        scale_limit = base + (-scale_probe.total if side == "lower" else scale_probe.total)
    else:
        scale_limit = None
        notes.append("scale probe inconclusive")

    feller_value = math.inf if feller_probe.diverges else \
        (feller_probe.total if feller_probe.diverges is False else None)
    if feller_probe.diverges is None:
        notes.append("feller probe inconclusive")

    alpha_verdict = None
    alpha_applicable = alpha is not None
    if alpha is not None:
        if alpha >= 1.0:
            alpha_verdict = "inaccessible"
        elif m_bounded:
            alpha_verdict = "accessible"
        else:
            alpha_applicable = False
            notes.append("alpha < 1 but speed density unbounded near endpoint; "
                         "exponent prong abstains")

    votes = []
    if scale_probe.diverges is True:
        votes.append("inaccessible")
    if feller_probe.diverges is True:
        votes.append("inaccessible")
    elif feller_probe.diverges is False:
        votes.append("accessible")
    if alpha_applicable and alpha_verdict is not None:
        votes.append(alpha_verdict)

    if scale_probe.diverges is True:
        classification = "inaccessible"
        if any(v != "inaccessible" for v in votes):
            notes.append("prong disagreement overridden: divergent scale "
                         "limit forces inaccessibility")
    elif votes and all(v == votes[0] for v in votes):
        classification = votes[0]
    elif alpha_applicable and alpha is not None and abs(alpha - 1.0) > 0.1:
        classification = alpha_verdict
        notes.append("prongs disagreed; exponent fit used as tie-breaker")
    else:
        classification = "inconclusive"

    return EndpointReport(endpoint, side, scale_limit, scale_probe.diverges,
                          feller_value, feller_probe.diverges, alpha,
                          alpha_applicable, classification, notes)


def classify_both(config: ModelConfig, a: Optional[float] = None) -> BoundaryReport:
    return BoundaryReport(classify_boundary(config, "lower", a),
                          classify_boundary(config, "upper", a))


def hitting_probability(config: ModelConfig, x: float, l: float, u: float,
                        a: Optional[float] = None) -> float:
    """P(hit u before l) from x, via the scale function identity."""
    if not (l < x < u):
        raise ModelError("need l < x < u")
    if l == u:
        raise ModelError("degenerate band")
    dom = config.domain
    if not (dom.lower < l and u < dom.upper):
        raise ModelError("band must sit inside the open domain")
    ss = ScaleSpeed.from_config(config, a, c=l)
    s_x = ss.scale(x)
    s_u = ss.scale(u)
    return float(s_x / s_u) if s_u != 0 else 0.0

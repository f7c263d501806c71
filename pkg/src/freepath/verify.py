"""Verification suite: every acceptance check at desk scale.

Each numbered criterion is evaluated from one or more *workloads* (pure
functions of the seed), so the suite can fan workloads out to a process pool
while the evaluated criteria stay bit-identical at any worker count.  The
byte-compared summary contains only deterministic values; wall-clock timings
are reported separately.

Targets are the closed-form limits: the hazard identity F_n(N) ~ Exp(1), the
free-time law Exp(g v), the scaled drift (-(1/(d g^2))[(d-1) grad U/(m v^2)
+ grad g/g], 1/(g v)), spatial covariance 2/(d g^2) (with the (d-1)/(d g^2)
alternative resolved empirically at d=2), the stopped-diffusion marginals
with their exit times and clock, the natural-time change, and the boundary
classifications.  The time-coordinate second moment n E[T_1^2] equals
n^{-1} * 2/(g v)^2 to leading order (second-moment law of the scaled free
time), so its log-log slope target is -1.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import boundary, diffusion, stats
from .chain import run_chains
from .collision import sample_directions
from .dynamics import FlightStatus, run_flights
from .model import speed
from .numerics.rng import RngStream
from .scenarios import scenario

DRIFT_TOL = 1e-8
SIGMA_T_SLOPE_TARGET = -1.0
SLOPE_TOL = 0.15

LADDER_N = (1e2, 1e4, 1e6)
LADDER_SAMPLES = 100_000
BAND = (0.3, 0.7)
COMPARE_N = 1e4
COMPARE_T = 0.1
COMPARE_REPLICAS = 5_000
EM_DT = 1e-4
TIMECHANGE_T = 0.05
TIMECHANGE_PATHS = 4_096
HITTING_PATHS = 10_000
# the radial-exit cross-check needs the Euler-Maruyama barrier bias
# (~0.58 sigma sqrt(dt) per side) well under 3 MC standard errors
HITTING_DT = 4e-6


def _drift_stats(energy_drift, angmom_drift):
    return {
        "max_energy_drift": float(np.max(energy_drift)) if len(energy_drift) else 0.0,
        "max_angmom_drift": float(np.max(angmom_drift)) if len(angmom_drift) else 0.0,
        "violations": int(np.sum((np.asarray(energy_drift) > DRIFT_TOL) |
                                 (np.asarray(angmom_drift) > DRIFT_TOL))),
        "flights": int(len(energy_drift)),
    }


# --------------------------------------------------------------------------
# workloads (module-level and picklable; everything derives from the seed)

def workload_hazard_identity(seed):
    """Criterion 1: pooled F_n(N) over heterogeneous launches is Exp(1).

    The oracle re-integrates each sampled flight for its sampled duration and
    evaluates the cumulative hazard by composite Gauss-Legendre quadrature
    along the dense output, independently of the ODE hazard coordinate.
    """
    cfg = scenario("heuristic-1.2")
    count = 10_000
    rng = RngStream(seed, 1 << 32)
    gen = rng.generator()
    r0 = 0.15 + 0.7 * gen.random(count)
    u_dir = sample_directions(gen, count, 3)
    x0 = np.zeros((count, 3))
    x0[:, 0] = r0
    targets = -np.log1p(-gen.random(count))
    res = run_flights(cfg, x0, u_dir, hazard_targets=targets)
    ok = res.status == FlightStatus.OK
    inversion_gap = float(np.max(np.abs(res.hazards(3)[ok] - targets[ok])))

    # independent quadrature of the hazard along replayed flights
    nodes, weights = np.polynomial.legendre.leggauss(48)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    replay = run_flights(cfg, x0[ok], u_dir[ok], durations=res.durations[ok],
                         record=True)
    sqrt_n = math.sqrt(cfg.scaling_n)
    values = np.empty(int(np.sum(ok)))
    for i, seg in enumerate(replay.segments):
        ts = seg.duration * nodes
        states = seg.state_at(ts)
        r = np.linalg.norm(states[:, :3], axis=1)
        vv = np.linalg.norm(states[:, 3:6], axis=1)
        integrand = sqrt_n * np.asarray(cfg.g(r), dtype=float) * vv
        values[i] = seg.duration * float(weights @ integrand)
    ks = stats.ks_statistic(values, lambda t: 1.0 - np.exp(-np.asarray(t)))
    drift = _drift_stats(np.concatenate([res.energy_drift, replay.energy_drift]),
                         np.concatenate([res.angmom_drift, replay.angmom_drift]))
    return {"ks_statistic": ks.statistic, "ks_pvalue": ks.pvalue,
            "count": int(np.sum(ok)), "failures": int(np.sum(~ok)),
            "inversion_gap": inversion_gap,
            "oracle_vs_ode_max": float(np.max(np.abs(values - targets[ok]))),
            "drift": drift}


def workload_free_time_law(seed):
    """Criterion 2: KS distance of n^{1/4} N against Exp(g v) shrinks.

    The launch direction is held fixed (radially outward): the per-direction
    law N(r0, theta) is what converges, and averaging over directions would
    cancel the leading finite-n deviation, leaving nothing to compare.
    """
    cfg = scenario("heuristic-1.2")
    x = np.array([0.5, 0.0, 0.0])
    u = np.array([1.0, 0.0, 0.0])
    rate = float(cfg.g(0.5)) * float(speed(cfg, 0.5))
    count = 10_000
    out = {}
    drifts_e, drifts_l = [], []
    for tag, n in (("low", 1e2), ("high", 1e6)):
        cfg_n = cfg.with_scaling(n)
        rng = RngStream(seed, (2 << 32) + int(n))
        targets = rng.exponential(count)
        res = run_flights(cfg_n, np.tile(x, (count, 1)), np.tile(u, (count, 1)),
                          hazard_targets=targets)
        ok = res.status == FlightStatus.OK
        scaled = n ** 0.25 * res.durations[ok]
        ks = stats.ks_statistic(scaled, stats.exponential_cdf(rate))
        out["ks_%s" % tag] = ks.statistic
        out["failures_%s" % tag] = int(np.sum(~ok))
        drifts_e.append(res.energy_drift)
        drifts_l.append(res.angmom_drift)
    out["rate"] = rate
    out["drift"] = _drift_stats(np.concatenate(drifts_e), np.concatenate(drifts_l))
    return out


def _ladder_payload(cfg, x, rng, convention):
    ladder = stats.convergence_ladder(x, cfg, LADDER_N, LADDER_SAMPLES, rng,
                                      convention)
    rows = []
    d = cfg.dimension
    for row in ladder.rows:
        mom, lim = row.moments, row.limits
        rows.append({
            "n": row.n,
            "mu": [float(v) for v in mom.mu],
            "mu_se": [float(v) for v in mom.mu_se],
            "mu_limit": [float(v) for v in lim.drift],
            "sigma_diag": [float(mom.sigma2[i, i]) for i in range(d)],
            "sigma_diag_se": [float(mom.sigma2_se[i, i]) for i in range(d)],
            "sigma_offdiag_max": float(max(abs(mom.sigma2[i, j])
                                           for i in range(d) for j in range(d) if i != j)),
            "sigma_offdiag_se_max": float(max(mom.sigma2_se[i, j]
                                              for i in range(d) for j in range(d) if i != j)),
            "sigma_mixed_max": float(max(abs(mom.sigma2[i, d]) for i in range(d))),
            "sigma_mixed_se_max": float(max(mom.sigma2_se[i, d] for i in range(d))),
            "sigma_t": row.sigma_t,
            "sigma_t_se": row.sigma_t_se,
            "sigma_limit": float(lim.covariance[0, 0]),
            "ks": row.ks_distance,
            "mu_err": row.mu_err,
            "failures": mom.failures,
            "drift": {"max_energy_drift": mom.max_energy_drift,
                      "max_angmom_drift": mom.max_angmom_drift,
                      "violations": mom.drift_violations,
                      "flights": mom.count + mom.failures},
        })
    return rows


def workload_ladder_d3(seed):
    """Criteria 3-4: the d=3 moment ladder for the canonical scenario."""
    cfg = scenario("heuristic-1.2")
    x = np.array([0.5, 0.0, 0.0])
    return {"rows": _ladder_payload(cfg, x, RngStream(seed, 3 << 32), "two-over-d")}


def workload_ladder_d2(seed):
    """Criterion 12: d=2 ladder with a variable density resolves the
    spatial covariance constant (2/(d g^2) vs (d-1)/(d g^2))."""
    cfg = scenario("free", dimension=2, beta=0.5)
    x = np.array([0.5, 0.0])
    rows = _ladder_payload(cfg, x, RngStream(seed, 9 << 32), "two-over-d")
    g = float(cfg.g(0.5))
    return {"rows": rows, "candidate_two_over_d": 2.0 / (2.0 * g * g),
            "candidate_d_minus_one": 1.0 / (2.0 * g * g)}


def workload_chain_vs_diffusion(seed):
    """Criteria 5-7: stopped-chain marginal, exit time, and clock against
    the limiting diffusion."""
    cfg = scenario("heuristic-1.2").with_scaling(COMPARE_N)
    x0 = np.array([0.5, 0.0, 0.0])
    k_target = int(math.floor(COMPARE_N * COMPARE_T))
    ens = run_chains(x0, cfg, RngStream(seed, 4 << 32), COMPARE_REPLICAS,
                     step_budget=30_000, band=BAND, k_target=k_target)
    good = ~ens.failed
    chain_snap = ens.snapshot_positions[good]
    chain_t_scaled = ens.snapshot_t_scaled[good]
    chain_tau = ens.tau[good] / COMPARE_N  # nan where never exited

    em = diffusion.ensemble(cfg, x0, COMPARE_REPLICAS, EM_DT, BAND,
                            RngStream(seed, 5 << 32), t_snapshot=COMPARE_T,
                            require_exit=True, horizon=5.0)
    exited_before_t = np.isfinite(em["exit_time"]) & (em["exit_time"] <= COMPARE_T)
    em_clock_stopped = np.where(exited_before_t, em["exit_clock"],
                                em["snapshot_clock"])

    edist = stats.energy_distance_test(chain_snap, em["snapshot"],
                                       RngStream(seed, 6 << 32))
    mean_rows = []
    for i in range(3):
        cmp_i = stats.compare_means(chain_snap[:, i], em["snapshot"][:, i])
        mean_rows.append({"component": i, "difference": cmp_i.difference,
                          "pooled_se": cmp_i.pooled_se, "within": bool(cmp_i.within)})
    tau_chain = chain_tau[np.isfinite(chain_tau)]
    tau_em = em["exit_time"][np.isfinite(em["exit_time"])]
    exit_cmp = stats.compare_means(tau_chain, tau_em)
    clock_cmp = stats.compare_means(chain_t_scaled, em_clock_stopped)
    return {
        "means": mean_rows,
        "energy_distance_pvalue": edist.pvalue,
        "energy_distance_stat": edist.statistic,
        "chain_failures": int(np.sum(ens.failed)),
        "chain_censored": int(np.sum(~np.isfinite(chain_tau))),
        "em_censored": int(np.sum(~np.isfinite(em["exit_time"]))),
        "exit_diff": exit_cmp.difference, "exit_se": exit_cmp.pooled_se,
        "exit_mean_chain": float(np.mean(tau_chain)),
        "exit_mean_em": float(np.mean(tau_em)),
        "clock_diff": clock_cmp.difference, "clock_se": clock_cmp.pooled_se,
        "clock_mean_chain": float(np.mean(chain_t_scaled)),
        "clock_mean_em": float(np.mean(em_clock_stopped)),
        "drift": _drift_stats(ens.max_energy_drift[good], ens.max_angmom_drift[good]),
    }


def workload_time_change(seed):
    """Criterion 8: X(Omega(t) ^ tau) against the directly simulated
    clock-rate-multiplied generator."""
    cfg = scenario("heuristic-1.2").with_scaling(COMPARE_N)
    x0 = np.array([0.5, 0.0, 0.0])
    via_clock = diffusion.ensemble(cfg, x0, TIMECHANGE_PATHS, EM_DT, BAND,
                                   RngStream(seed, 7 << 32),
                                   clock_target=TIMECHANGE_T, horizon=2.0)
    direct = diffusion.ensemble(cfg, x0, TIMECHANGE_PATHS, EM_DT, BAND,
                                RngStream(seed, (7 << 32) + 1),
                                natural_scale=True, t_snapshot=TIMECHANGE_T)
    edist = stats.energy_distance_test(via_clock["state_at_clock"],
                                       direct["snapshot"],
                                       RngStream(seed, (7 << 32) + 2))
    return {"energy_distance_pvalue": edist.pvalue,
            "energy_distance_stat": edist.statistic,
            "mean_radius_time_changed":
                float(np.mean(np.linalg.norm(via_clock["state_at_clock"], axis=1))),
            "mean_radius_direct":
                float(np.mean(np.linalg.norm(direct["snapshot"], axis=1)))}


def workload_boundary(seed):
    """Criterion 9: categorical boundary classifications."""
    results = {}
    for name, kwargs in (("constant-force", {}),
                         ("newtonian", {}),
                         ("harmonic", {})):
        cfg = scenario(name, **kwargs)
        rep = boundary.classify_both(cfg)
        results[name] = {
            "lower": rep.lower.classification,
            "upper": rep.upper.classification,
            "lower_alpha": rep.lower.alpha,
            "upper_alpha": rep.upper.alpha,
        }
    return results


def workload_hitting(seed):
    """Criterion 10: exit-side frequency of the radial simulator against the
    scale-function identity."""
    out = {}
    for i, name in enumerate(("heuristic-1.2", "free")):
        cfg = scenario(name)
        p_scale = boundary.hitting_probability(cfg, 0.5, BAND[0], BAND[1])
        em = diffusion.ensemble(cfg, 0.5, HITTING_PATHS, HITTING_DT, BAND,
                                RngStream(seed, (8 << 32) + i), radial=True,
                                require_exit=True, horizon=10.0)
        exited = np.isfinite(em["exit_time"])
        hit_upper = em["exit_state"][exited] > 0.5
        p_hat = float(np.mean(hit_upper))
        se = math.sqrt(max(p_hat * (1 - p_hat), 1e-12) / hit_upper.size)
        out[name] = {"p_scale": p_scale, "p_mc": p_hat, "se": se,
                     "censored": int(np.sum(~exited))}
    return out


WORKLOADS = [
    ("hazard_identity", workload_hazard_identity),
    ("free_time_law", workload_free_time_law),
    ("ladder_d3", workload_ladder_d3),
    ("chain_vs_diffusion", workload_chain_vs_diffusion),
    ("time_change", workload_time_change),
    ("boundary", workload_boundary),
    ("hitting", workload_hitting),
    ("ladder_d2", workload_ladder_d2),
]


def _run_one(args):
    name, seed = args
    fn = dict(WORKLOADS)[name]
    t0 = time.perf_counter()
    payload = fn(seed)
    return name, payload, time.perf_counter() - t0


def run_workloads(seed: int, workers: int = 1):
    """Execute all workloads; results keyed by name, timings separate."""
    jobs = [(name, seed) for name, _ in WORKLOADS]
    payloads = {}
    timings = {}
    if workers <= 1:
        results = map(_run_one, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_run_one, jobs)
    for name, payload, elapsed in results:
        payloads[name] = payload
        timings[name] = elapsed
    if workers > 1:
        pool.shutdown()
    return payloads, timings


# --------------------------------------------------------------------------
# criteria evaluation (pure functions of the workload payloads)

@dataclass
class CriterionResult:
    cid: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def line(self):
        return "criterion %2d %-4s %s" % (self.cid, "PASS" if self.passed else "FAIL",
                                          self.name)


def _against(value, target, se, sigmas=3.0):
    return abs(value - target) <= sigmas * se


def evaluate_criteria(payloads) -> list:
    out = []

    # 1. hazard identity
    p = payloads["hazard_identity"]
    out.append(CriterionResult(1, "hazard identity F_n(N) ~ Exp(1), KS p > 0.01",
                               p["ks_pvalue"] > 0.01 and p["failures"] == 0,
                               p))

    # 2. free-time limit law
    p = payloads["free_time_law"]
    out.append(CriterionResult(
        2, "n^(1/4) N -> Exp(g v): KS <= 0.02 at n=1e6 and below the n=1e2 value",
        p["ks_high"] <= 0.02 and p["ks_high"] < p["ks_low"], p))

    # 3. drift limit along the ladder
    rows = payloads["ladder_d3"]["rows"]
    first, last = rows[0], rows[-1]
    within = all(_against(last["mu"][i], last["mu_limit"][i], last["mu_se"][i])
                 for i in range(len(last["mu"])))
    pooled = math.sqrt(max(first["mu_se"]) ** 2 + max(last["mu_se"]) ** 2)
    not_worse = last["mu_err"] <= first["mu_err"] + 2.0 * pooled
    out.append(CriterionResult(
        3, "scaled drift within 3 SE of the limit; discrepancy non-increasing",
        within and not_worse,
        {"final_mu": last["mu"], "limit": last["mu_limit"],
         "final_se": last["mu_se"], "first_err": first["mu_err"],
         "final_err": last["mu_err"], "pooled_se": pooled}))

    # 4. covariance limit + time-variance decay rate
    diag_ok = all(_against(last["sigma_diag"][i], last["sigma_limit"],
                           last["sigma_diag_se"][i])
                  for i in range(len(last["sigma_diag"])))
    off_ok = last["sigma_offdiag_max"] <= 3.0 * last["sigma_offdiag_se_max"]
    mixed_ok = last["sigma_mixed_max"] <= 3.0 * last["sigma_mixed_se_max"]
    slope = stats.loglog_slope([r["n"] for r in rows], [r["sigma_t"] for r in rows])
    slope_ok = abs(slope - SIGMA_T_SLOPE_TARGET) <= SLOPE_TOL
    out.append(CriterionResult(
        4, "covariance: diag -> 2/(3g^2), off-diag/mixed -> 0, sigma_t slope -1",
        diag_ok and off_ok and mixed_ok and slope_ok,
        {"diag": last["sigma_diag"], "diag_limit": last["sigma_limit"],
         "offdiag_max": last["sigma_offdiag_max"],
         "mixed_max": last["sigma_mixed_max"],
         "sigma_t_by_n": {str(r["n"]): r["sigma_t"] for r in rows},
         "slope": slope, "slope_target": SIGMA_T_SLOPE_TARGET,
         "slope_note": "n E[T1^2] = n^-1 * 2/(gv)^2 to leading order, "
                       "hence slope -1"}))

    # 5. chain -> diffusion marginal
    p = payloads["chain_vs_diffusion"]
    means_ok = all(row["within"] for row in p["means"])
    out.append(CriterionResult(
        5, "stopped-chain marginal matches the diffusion (means + energy distance)",
        means_ok and p["energy_distance_pvalue"] > 0.01 and p["chain_failures"] == 0,
        {k: p[k] for k in ("means", "energy_distance_pvalue", "chain_failures")}))

    # 6. exit-time convergence
    out.append(CriterionResult(
        6, "mean exit time: tau^n / n vs diffusion tau within 3 pooled SE",
        abs(p["exit_diff"]) <= 3.0 * p["exit_se"],
        {k: p[k] for k in ("exit_diff", "exit_se", "exit_mean_chain",
                           "exit_mean_em", "chain_censored", "em_censored")}))

    # 7. clock convergence
    out.append(CriterionResult(
        7, "mean scaled time at the stopped index vs the clock integral",
        abs(p["clock_diff"]) <= 3.0 * p["clock_se"],
        {k: p[k] for k in ("clock_diff", "clock_se", "clock_mean_chain",
                           "clock_mean_em")}))

    # 8. time-change equivalence
    p = payloads["time_change"]
    out.append(CriterionResult(
        8, "X(Omega(t)) marginal matches the clock-rate-multiplied generator",
        p["energy_distance_pvalue"] > 0.01, p))

    # 9. boundary classifications
    p = payloads["boundary"]
    expected = {"constant-force": ("inaccessible", "inaccessible"),
                "newtonian": ("inaccessible", "inaccessible"),
                "harmonic": ("inaccessible", None)}
    ok = True
    for name, (lo, hi) in expected.items():
        if lo is not None and p[name]["lower"] != lo:
            ok = False
        if hi is not None and p[name]["upper"] != hi:
            ok = False
    out.append(CriterionResult(9, "boundary classifications (categorical)", ok, p))

    # 10. hitting-probability cross-check
    p = payloads["hitting"]
    ok = all(abs(v["p_mc"] - v["p_scale"]) <= 3.0 * v["se"] for v in p.values())
    out.append(CriterionResult(10, "radial exit side matches the scale identity",
                               ok, p))

    # 11. conservation across all runs
    drift_blocks = []
    for name in ("hazard_identity", "free_time_law", "chain_vs_diffusion"):
        drift_blocks.append(payloads[name]["drift"])
    for key in ("ladder_d3", "ladder_d2"):
        for row in payloads[key]["rows"]:
            drift_blocks.append(row["drift"])
    violations = sum(b["violations"] for b in drift_blocks)
    max_e = max(b["max_energy_drift"] for b in drift_blocks)
    max_l = max(b["max_angmom_drift"] for b in drift_blocks)
    flights = sum(b["flights"] for b in drift_blocks)
    out.append(CriterionResult(
        11, "energy and angular momentum conserved to 1e-8 on every flight",
        violations == 0,
        {"max_energy_drift": max_e, "max_angmom_drift": max_l,
         "violations": violations, "flights_checked": flights}))

    # 12. d=2 covariance constant resolution
    p = payloads["ladder_d2"]
    last = p["rows"][-1]
    diag = last["sigma_diag"]
    se = last["sigma_diag_se"]
    cand_two = p["candidate_two_over_d"]
    cand_dm1 = p["candidate_d_minus_one"]
    match_two = all(_against(diag[i], cand_two, se[i]) for i in range(len(diag)))
    match_dm1 = all(_against(diag[i], cand_dm1, se[i]) for i in range(len(diag)))
    resolved = match_two != match_dm1
    out.append(CriterionResult(
        12, "d=2 ladder resolves the covariance constant",
        resolved,
        {"diag": diag, "se": se, "candidate_two_over_d": cand_two,
         "candidate_d_minus_one_over_d": cand_dm1,
         "matches_two_over_d": match_two,
         "matches_d_minus_one_over_d": match_dm1,
         "resolution": ("2/(d g^2)" if match_two else
                        ("(d-1)/(d g^2)" if match_dm1 else "unresolved"))}))

    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


def criteria_payload(criteria) -> dict:
    return {str(c.cid): {"name": c.name, "passed": c.passed, "details": c.details}
            for c in criteria}


@dataclass
class SuiteResult:
    criteria: list
    payloads: dict
    timings: dict
    determinism_checked: bool
    determinism_ok: bool

    @property
    def all_passed(self):
        return all(c.passed for c in self.criteria)


def run_suite(seed: int, workers: int = 1, check_determinism: bool = True,
              echo=print) -> SuiteResult:
    """Run criteria 1-12; criterion 13 reruns them at a different worker
    count and byte-compares the canonical summaries."""
    payloads, timings = run_workloads(seed, workers)
    criteria = evaluate_criteria(payloads)
    det_ok = True
    if check_determinism:
        other = 2 if workers <= 1 else 1
        payloads2, timings2 = run_workloads(seed, other)
        criteria2 = evaluate_criteria(payloads2)
        det_ok = canonical_json(criteria_payload(criteria)) == \
            canonical_json(criteria_payload(criteria2))
        for key, val in timings2.items():
            timings[key + "_rerun"] = val
        criteria.append(CriterionResult(
            13, "byte-identical summaries at worker counts %d and %d" %
            (workers if workers >= 1 else 1, other), det_ok,
            {"workers_compared": [max(workers, 1), other]}))
    for c in criteria:
        echo(c.line())
    return SuiteResult(criteria, payloads, timings, check_determinism, det_ok)

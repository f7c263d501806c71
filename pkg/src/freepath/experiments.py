"""Experiment configuration and orchestration.

One structured JSON config (``//`` and ``/* */`` comments allowed) is the
only input surface; unknown keys are rejected, the seed is mandatory, and the
fully-resolved config is echoed into the output directory so every run can
be archived and replayed byte-for-byte.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import boundary, diffusion, stats, verify
from .chain import reconstruct_trajectory, run_chain, run_chains
from .errors import ConfigError, FreepathError
from .model import ModelConfig, validate_assumptions
from .numerics.rng import RngStream
from .scenarios import scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ASSERTION = 4

KINDS = ("chain", "trajectory", "diffusion", "diffusion-compare", "ladder",
         "boundary", "verify")

_SCENARIO_KEYS = {"name": str, "dimension": int, "mass": (int, float),
                  "energy": (int, float), "beta": (int, float),
                  "force": (int, float), "gravity_k": (int, float),
                  "harmonic_a": (int, float), "potential_expression": str,
                  "density_expression": str}
_TOLERANCE_KEYS = {"rtol": (int, float), "atol": (int, float),
                   "t_max": (int, float), "r_max": (int, float),
                   "v_cap": (int, float), "origin_exclusion": (int, float),
                   "epsilon_origin_factor": (int, float), "grid_points": int,
                   "event_time_tol": (int, float)}
_TOP_KEYS = {"seed": int, "kind": str, "scenario": dict, "n": (int, float),
             "n_ladder": list, "samples": int, "replicas": int,
             "step_budget": int, "band": list, "x0_radius": (int, float),
             "t": (int, float), "dt": (int, float), "horizon": (int, float),
             "time_change_t": (int, float), "workers": int,
             "covariance_convention": str, "tolerances": dict,
             "output": str, "trajectory_samples": int,
             "check_determinism": bool}


def strip_json_comments(text: str) -> str:
    """Remove // line comments and /* */ block comments outside strings."""
    out = []
    i = 0
    in_string = False
    while i < len(text):
        ch = text[i]
        if in_string:
            out.append(ch)
            if ch == "\\" and i + 1 < len(text):
                out.append(text[i + 1])
                i += 2
                continue
            if ch == '"':
                in_string = False
            i += 1
            continue
        if ch == '"':
            in_string = True
            out.append(ch)
            i += 1
            continue
        if text.startswith("//", i):
            j = text.find("\n", i)
            i = len(text) if j < 0 else j
            continue
        if text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                raise ConfigError("unterminated block comment")
            i = j + 2
            continue
        out.append(ch)
        i += 1
    return "".join(out)


def _check_keys(obj: dict, allowed: dict, where: str):
    for key, value in obj.items():
        if key not in allowed:
            raise ConfigError("unknown key %r in %s (allowed: %s)" %
                              (key, where, ", ".join(sorted(allowed))))
        expected = allowed[key]
        if expected is not bool and isinstance(value, bool):
            raise ConfigError("field %s.%s has wrong type (got bool)" % (where, key))
        if not isinstance(value, expected):
            raise ConfigError("field %s.%s has wrong type (expected %s)" %
                              (where, key, expected))


@dataclass
class ExperimentConfig:
    seed: int
    kind: str
    scenario_spec: dict
    n: float = 1.0
    n_ladder: Optional[list] = None
    samples: int = 10_000
    replicas: int = 1_000
    step_budget: int = 10_000
    band: Optional[tuple] = None
    x0_radius: Optional[float] = None
    t: float = 0.1
    dt: float = 1e-4
    horizon: float = 5.0
    time_change_t: float = 0.05
    workers: int = 1
    covariance_convention: str = "two-over-d"
    tolerances: dict = field(default_factory=dict)
    output: Optional[str] = None
    trajectory_samples: int = 512
    check_determinism: bool = True

    def build_model(self) -> ModelConfig:
        spec = dict(self.scenario_spec)
        name = spec.pop("name")
        cfg = scenario(name, scaling_n=self.n, **spec)
        if self.tolerances:
            cfg = cfg.with_options(**self.tolerances)
        return cfg

    def launch_radius(self, cfg: ModelConfig) -> float:
        if self.x0_radius is not None:
            return self.x0_radius
        dom = cfg.domain
        return 0.5 * (dom.lower + dom.upper) if dom.finite_upper else dom.lower + 0.5

    def resolved(self) -> dict:
        data = asdict(self)
        data["band"] = list(self.band) if self.band else None
        return data


def parse_config_data(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be an object")
    _check_keys(data, _TOP_KEYS, "config")
    if "seed" not in data:
        raise ConfigError("missing mandatory field 'seed'")
    if "kind" not in data:
        raise ConfigError("missing mandatory field 'kind'")
    if data["kind"] not in KINDS:
        raise ConfigError("unknown kind %r (allowed: %s)" %
                          (data["kind"], ", ".join(KINDS)))
    scen = data.get("scenario", {"name": "heuristic-1.2"})
    _check_keys(scen, _SCENARIO_KEYS, "config.scenario")
    if "name" not in scen:
        raise ConfigError("missing config.scenario.name")
    tol = data.get("tolerances", {})
    _check_keys(tol, _TOLERANCE_KEYS, "config.tolerances")
    band = data.get("band")
    if band is not None:
        if len(band) != 2 or not all(isinstance(v, (int, float)) for v in band):
            raise ConfigError("config.band must be [l, u]")
        band = (float(band[0]), float(band[1]))
        if not band[0] < band[1]:
            raise ConfigError("config.band needs l < u")
    ladder = data.get("n_ladder")
    if ladder is not None:
        if not all(isinstance(v, (int, float)) and v > 0 for v in ladder):
            raise ConfigError("config.n_ladder must be positive numbers")
        ladder = [float(v) for v in ladder]
    return ExperimentConfig(
        seed=data["seed"], kind=data["kind"], scenario_spec=dict(scen),
        n=float(data.get("n", 1.0)), n_ladder=ladder,
        samples=data.get("samples", 10_000),
        replicas=data.get("replicas", 1_000),
        step_budget=data.get("step_budget", 10_000),
        band=band, x0_radius=data.get("x0_radius"),
        t=float(data.get("t", 0.1)), dt=float(data.get("dt", 1e-4)),
        horizon=float(data.get("horizon", 5.0)),
        time_change_t=float(data.get("time_change_t", 0.05)),
        workers=data.get("workers", 1),
        covariance_convention=data.get("covariance_convention", "two-over-d"),
        tolerances=dict(tol), output=data.get("output"),
        trajectory_samples=data.get("trajectory_samples", 512),
        check_determinism=data.get("check_determinism", True))


def parse_config(path) -> ExperimentConfig:
    """Load, comment-strip, schema-validate, and materialize defaults."""
    text = Path(path).read_text()
    try:
        data = json.loads(strip_json_comments(text))
    except json.JSONDecodeError as exc:
        raise ConfigError("config is not valid JSON: line %d column %d: %s" %
                          (exc.lineno, exc.colno, exc.msg)) from exc
    return parse_config_data(data)


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, float) and (math.isnan(obj) or math.isinf(obj)):
        return repr(obj)
    return obj


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(_to_jsonable(payload), sort_keys=True, indent=1)
                    + "\n")


@dataclass
class ExperimentResult:
    exit_code: int
    summary: dict
    artifacts: list


def run_experiment(config: ExperimentConfig, output_dir,
                   workers: Optional[int] = None,
                   seed_override: Optional[int] = None) -> ExperimentResult:
    """Dispatch one experiment; writes artifacts plus a summary JSON and the
    resolved-config echo.  Exit codes: 0 pass, 2 config, 3 numeric failure,
    4 assertion failure."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if seed_override is not None:
        config = ExperimentConfig(**{**config.__dict__,
                                     "seed": int(seed_override)})
    if workers is not None:
        config = ExperimentConfig(**{**config.__dict__, "workers": int(workers)})
    artifacts = [out / "config_resolved.json"]
    _write_json(out / "config_resolved.json", config.resolved())

    if config.kind != "verify":
        model_cfg = config.build_model()
        report = validate_assumptions(model_cfg, 2000)
        if not report.all_passed:
            _write_json(out / "summary.json",
                        {"error": "assumption validation failed",
                         "report": str(report)})
            return ExperimentResult(EXIT_CONFIG,
                                    {"error": str(report)}, artifacts)

    handler = {
        "chain": _run_chain_kind,
        "trajectory": _run_trajectory_kind,
        "diffusion": _run_diffusion_kind,
        "diffusion-compare": _run_compare_kind,
        "ladder": _run_ladder_kind,
        "boundary": _run_boundary_kind,
        "verify": _run_verify_kind,
    }[config.kind]
    try:
        exit_code, summary, extra = handler(config, out)
    except FreepathError as exc:
        summary = {"error": str(exc)}
        _write_json(out / "summary.json", summary)
        return ExperimentResult(EXIT_NUMERIC, summary, artifacts)
    artifacts.extend(extra)
    _write_json(out / "summary.json", summary)
    artifacts.append(out / "summary.json")
    return ExperimentResult(exit_code, summary, artifacts)


def _run_chain_kind(config, out):
    cfg = config.build_model()
    r0 = config.launch_radius(cfg)
    x0 = np.zeros(cfg.dimension)
    x0[0] = r0
    rng = RngStream(config.seed, 0)
    ens = run_chains(x0, cfg, rng, config.replicas, config.step_budget,
                     band=config.band)
    single = run_chain(x0, cfg, min(config.step_budget, 2000),
                       RngStream(config.seed, 1), band=config.band)
    single.to_jsonl(out / "reflections.jsonl")
    with open(out / "chains.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "k_stop", "tau", "t_scaled_stop",
                    "snapshot_radius", "failed"])
        radii = np.linalg.norm(ens.snapshot_positions, axis=1)
        for i in range(ens.count):
            w.writerow([i, int(ens.k_stop[i]),
                        "" if math.isnan(ens.tau[i]) else int(ens.tau[i]),
                        repr(float(ens.snapshot_t_scaled[i])),
                        repr(float(radii[i])), int(ens.failed[i])])
    summary = {
        "replicas": ens.count,
        "failures": int(np.sum(ens.failed)),
        "mean_steps": float(np.mean(ens.k_stop)),
        "exited_fraction": float(np.mean(np.isfinite(ens.tau))),
        "max_energy_drift": float(np.max(ens.max_energy_drift)),
        "max_angmom_drift": float(np.max(ens.max_angmom_drift)),
        "total_flights": ens.total_flights,
    }
    ok = summary["failures"] == 0 and summary["max_energy_drift"] <= 1e-8
    return (EXIT_OK if ok else EXIT_ASSERTION), summary, \
        [out / "reflections.jsonl", out / "chains.csv"]


def _run_trajectory_kind(config, out):
    cfg = config.build_model()
    r0 = config.launch_radius(cfg)
    x0 = np.zeros(cfg.dimension)
    x0[0] = r0
    run = run_chain(x0, cfg, config.step_budget, RngStream(config.seed, 0),
                    band=config.band)
    horizon = float(run.t_raw[-1])
    times = np.linspace(0.0, horizon, config.trajectory_samples)
    traj = reconstruct_trajectory(run, times, compute_iota=config.band is not None)
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + ["x_%d" % (i + 1) for i in range(cfg.dimension)] + ["r"])
        for t, pos in zip(traj.times, traj.positions):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in pos] +
                       [repr(float(np.linalg.norm(pos)))])
    summary = {"reflections": len(run), "horizon_raw": horizon,
               "stop_reason": run.stop_reason.value,
               "tau_index": run.tau_index,
               "iota_raw": traj.iota,
               "max_energy_drift": float(np.max(run.energy_drift))
               if len(run) else 0.0}
    return EXIT_OK, summary, [out / "trajectory.csv"]


def _run_diffusion_kind(config, out):
    cfg = config.build_model()
    r0 = config.launch_radius(cfg)
    x0 = np.zeros(cfg.dimension)
    x0[0] = r0
    path = diffusion.simulate_G(x0, cfg, config.t, config.dt, config.band,
                                RngStream(config.seed, 0),
                                config.covariance_convention)
    path.to_csv(out / "path.csv")
    ens = diffusion.ensemble(cfg, x0, config.replicas, config.dt, config.band,
                             RngStream(config.seed, 1),
                             convention=config.covariance_convention,
                             t_snapshot=config.t,
                             require_exit=config.band is not None,
                             horizon=config.horizon)
    radii = np.linalg.norm(ens["snapshot"], axis=1)
    summary = {
        "paths": config.replicas,
        "mean_radius_at_t": float(np.mean(radii)),
        "sd_radius_at_t": float(np.std(radii)),
        "exited_fraction": float(np.mean(np.isfinite(ens["exit_time"]))),
        "mean_exit_time": float(np.nanmean(ens["exit_time"]))
        if np.any(np.isfinite(ens["exit_time"])) else None,
        "mean_clock_at_t": float(np.mean(ens["snapshot_clock"])),
    }
    return EXIT_OK, summary, [out / "path.csv"]


def _run_compare_kind(config, out):
    cfg = config.build_model()
    r0 = config.launch_radius(cfg)
    x0 = np.zeros(cfg.dimension)
    x0[0] = r0
    if config.band is None:
        raise ConfigError("diffusion-compare needs a band")
    k_target = int(math.floor(config.n * config.t))
    ens = run_chains(x0, cfg, RngStream(config.seed, 0), config.replicas,
                     config.step_budget, band=config.band, k_target=k_target)
    good = ~ens.failed
    em = diffusion.ensemble(cfg, x0, config.replicas, config.dt, config.band,
                            RngStream(config.seed, 1),
                            convention=config.covariance_convention,
                            t_snapshot=config.t, require_exit=True,
                            horizon=config.horizon)
    edist = stats.energy_distance_test(ens.snapshot_positions[good],
                                       em["snapshot"], RngStream(config.seed, 2))
    comps = []
    for i in range(cfg.dimension):
        c = stats.compare_means(ens.snapshot_positions[good][:, i],
                                em["snapshot"][:, i])
        comps.append({"component": i, "difference": c.difference,
                      "pooled_se": c.pooled_se, "within_3se": bool(c.within)})
    tau_chain = ens.tau[good & np.isfinite(ens.tau)] / config.n
    tau_em = em["exit_time"][np.isfinite(em["exit_time"])]
    exit_cmp = stats.compare_means(tau_chain, tau_em)
    summary = {
        "k_target": k_target,
        "means": comps,
        "energy_distance_pvalue": edist.pvalue,
        "exit_mean_chain": float(np.mean(tau_chain)),
        "exit_mean_diffusion": float(np.mean(tau_em)),
        "exit_within_3se": bool(exit_cmp.within),
        "chain_failures": int(np.sum(ens.failed)),
    }
    ok = all(c["within_3se"] for c in comps) and \
        summary["energy_distance_pvalue"] > 0.01 and summary["exit_within_3se"]
    return (EXIT_OK if ok else EXIT_ASSERTION), summary, []


def _run_ladder_kind(config, out):
    cfg = config.build_model()
    r0 = config.launch_radius(cfg)
    x0 = np.zeros(cfg.dimension)
    x0[0] = r0
    n_values = config.n_ladder or [1e2, 1e4, 1e6]
    ladder = stats.convergence_ladder(x0, cfg, n_values, config.samples,
                                      RngStream(config.seed, 0),
                                      config.covariance_convention)
    ladder.to_csv(out / "ladder.csv")
    first, last = ladder.rows[0], ladder.rows[-1]
    within = bool(np.all(np.abs(last.moments.mu - last.limits.drift)
                         <= 3.0 * last.moments.mu_se))
    pooled = math.sqrt(last.mu_se_max ** 2 + first.mu_se_max ** 2)
    not_worse = last.mu_err <= first.mu_err + 2.0 * pooled
    summary = {
        "n_values": [row.n for row in ladder.rows],
        "final_mu": [float(v) for v in last.moments.mu],
        "final_mu_se": [float(v) for v in last.moments.mu_se],
        "mu_limit": [float(v) for v in last.limits.drift],
        "final_within_3se": within,
        "discrepancy_not_worse": bool(not_worse),
        "ks_by_n": {str(r.n): r.ks_distance for r in ladder.rows},
        "sigma_t_by_n": {str(r.n): r.sigma_t for r in ladder.rows},
        "failures": sum(r.moments.failures for r in ladder.rows),
    }
    ok = within and not_worse
    return (EXIT_OK if ok else EXIT_ASSERTION), summary, [out / "ladder.csv"]


def _run_boundary_kind(config, out):
    cfg = config.build_model()
    report = boundary.classify_both(cfg)
    report.to_json(out / "boundary.json")
    summary = {"lower": report.lower.to_dict(), "upper": report.upper.to_dict()}
    ok = "inconclusive" not in (report.lower.classification,
                                report.upper.classification)
    return (EXIT_OK if ok else EXIT_ASSERTION), summary, [out / "boundary.json"]


def _run_verify_kind(config, out):
    suite = verify.run_suite(config.seed, config.workers,
                             check_determinism=config.check_determinism)
    _write_json(out / "criteria.json", verify.criteria_payload(suite.criteria))
    _write_json(out / "timings.json", suite.timings)
    summary = {
        "criteria": {str(c.cid): {"name": c.name, "passed": c.passed}
                     for c in suite.criteria},
        "all_passed": suite.all_passed,
    }
    code = EXIT_OK if suite.all_passed else EXIT_ASSERTION
    return code, summary, [out / "criteria.json", out / "timings.json"]

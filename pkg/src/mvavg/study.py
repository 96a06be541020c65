"""Experiment driver: strong-error estimation, epsilon sweeps, rate fitting.

The strong error at one scale separation couples the full system and the
averaged system through shared slow-noise streams (common random numbers) and
the same micro grid, so the difference process isolates the averaging error.
The per-epsilon statistic is the Monte Carlo estimate of

    E [ max over recorded times of ||X_full - X_avg||^2 ]

averaged over particles and independent replications; the replication spread
is the reported standard error.  A least-squares fit of log(error_sq) against
log(epsilon) is compared against the theoretical upper-bound convention: an
error bound of order eps^(1/3) means error_sq may decay no slower than
eps^(2/3), so the verdict passes when the fitted error_sq slope reaches
2/3 * 0.9 (10% slope tolerance) and the errors strictly decrease along the
grid.  Empirical slopes above the bound are expected and fine.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import noise as noise_mod
from .averaging import AveragedRunner, HmmConfig
from .integrate import FullRunner, MultiscaleParams, resolve_params
from .models import REGISTRY, ModelSpec, build_model, slow_norm_sq

SLOPE_TOLERANCE_FRACTION = 0.1
ERROR_SQ_SLOPE_THRESHOLD = (2.0 / 3.0) * (1.0 - SLOPE_TOLERANCE_FRACTION)
DEFAULT_EPS_GRID = (0.1, 0.05, 0.02, 0.01, 0.005)


class ConfigError(ValueError):
    """Invalid study configuration; the message names the offending key."""


_CONFIG_KEYS = {
    "model", "model_params", "n_particles", "epsilon_grid", "t_end",
    "h_factor", "delta_exponent", "replications", "seed", "out_dir",
    "record_points", "averaged_mode", "hmm", "workers", "x0", "y0", "crn",
}


@dataclass
class StudyConfig:
    model: str = "linear-benchmark"
    model_params: dict = field(default_factory=dict)
    n_particles: Optional[int] = None
    epsilon_grid: tuple = DEFAULT_EPS_GRID
    t_end: float = 1.0
    h_factor: float = 0.02
    delta_exponent: float = 2.0 / 3.0
    replications: int = 8
    seed: int = 2024
    out_dir: str = "out"
    record_points: int = 200
    averaged_mode: str = "exact"
    hmm: dict = field(default_factory=dict)
    workers: int = 1
    x0: Optional[list] = None
    y0: Optional[list] = None
    crn: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in REGISTRY:
            raise ConfigError(f"model: unknown id {self.model!r}; known: {sorted(REGISTRY)}")
        grid = tuple(float(e) for e in self.epsilon_grid)
        if any(not 0.0 < e <= 1.0 for e in grid):
            raise ConfigError("epsilon_grid: every entry must lie in (0, 1]")
        if any(a >= b for a, b in zip(grid[1:], grid[:-1])):
            raise ConfigError("epsilon_grid: epsilon grid must be strictly decreasing")
        self.epsilon_grid = grid
        if self.replications < 1:
            raise ConfigError("replications: must be >= 1")
        if self.t_end <= 0:
            raise ConfigError("t_end: must be positive")
        if not 0 < self.h_factor <= 0.1:
            raise ConfigError("h_factor: must lie in (0, 0.1]")
        if self.record_points < 2:
            raise ConfigError("record_points: must be >= 2")
        if self.averaged_mode not in ("exact", "hmm"):
            raise ConfigError("averaged_mode: must be 'exact' or 'hmm'")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        if self.n_particles is None:
            self.n_particles = 200 if self.model in ("porous-media-1d", "plaplace-1d") else 1000
        if self.n_particles < 1:
            raise ConfigError("n_particles: must be >= 1")
        model = self.build_model()
        if model.measure_dependent and self.n_particles < 2:
            raise ConfigError("n_particles: need N >= 2 for measure-dependent models")

    def build_model(self) -> ModelSpec:
        try:
            return build_model(self.model, self.model_params)
        except TypeError as exc:
            raise ConfigError(f"model_params: {exc}") from exc
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"model_params: {exc}") from exc

    def params_for(self, epsilon: float) -> MultiscaleParams:
        model = self.build_model()
        return resolve_params(epsilon, self.t_end, h_factor=self.h_factor,
                              h_max=model.h_max, delta_exponent=self.delta_exponent)

    def initial_states(self, model: ModelSpec):
        x0 = np.asarray(self.x0, dtype=float) if self.x0 is not None else model.default_x0
        y0 = np.asarray(self.y0, dtype=float) if self.y0 is not None else model.default_y0
        return x0, y0

    def hmm_config(self) -> HmmConfig:
        try:
            return HmmConfig(**self.hmm)
        except TypeError as exc:
            raise ConfigError(f"hmm: {exc}") from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path: str) -> StudyConfig:
    """Read and validate a JSON study config; unknown keys are rejected."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> StudyConfig:
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    if "MVAVG_SEED" in os.environ:
        try:
            raw = dict(raw, seed=int(os.environ["MVAVG_SEED"]))
        except ValueError as exc:
            raise ConfigError(f"seed: MVAVG_SEED must be an integer: {exc}") from exc
    try:
        return StudyConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# strong error at one epsilon
# ---------------------------------------------------------------------------

def _coupled_error_once(model: ModelSpec, cfg: StudyConfig, epsilon: float,
                        plan: noise_mod.NoisePlan) -> dict:
    """One replication: lockstep full/averaged runs under shared slow noise."""
    params = cfg.params_for(epsilon)
    x0, y0 = cfg.initial_states(model)
    N = cfg.n_particles
    delta = params.delta_block
    full = FullRunner(model, x0, y0, N, params, plan,
                      aux_delta=delta, increment_delta=delta,
                      context=f"full eps={epsilon:g} seed={plan.seed}")
    avg_kind = noise_mod.SLOW if cfg.crn else noise_mod.SLOW_ALT
    avg = AveragedRunner(model, x0, N, params, plan, mode=cfg.averaged_mode,
                         hmm=cfg.hmm_config() if cfg.averaged_mode == "hmm" else None,
                         slow_kind=avg_kind,
                         context=f"averaged eps={epsilon:g} seed={plan.seed}")
    n_steps = params.n_steps
    stride = max(1, n_steps // cfg.record_points)
    sup_sq = np.zeros(N)
    k = 0
    while k < n_steps:
        n_sub = min(stride, n_steps - k)
        xs = plan.gaussians(noise_mod.SLOW, k, n_sub, N, model.n_slow_modes)
        full.advance(n_sub, xs=xs)
        avg.advance(n_sub, xs=xs if cfg.crn else None)
        k += n_sub
        diff_sq = slow_norm_sq(model, full.X - avg.X)
        np.maximum(sup_sq, diff_sq, out=sup_sq)
    return {
        "error_sq": float(np.mean(sup_sq)),
        "aux_gap": full.aux_gap,
        "increment_stat": full.increment_stat,
    }


def strong_error(model: ModelSpec, cfg: StudyConfig, epsilon: float, seed: int) -> dict:
    """Monte Carlo strong-error estimate at one epsilon.

    Replications are independent seeds; within a replication the particle
    ensemble shares one empirical measure, so the standard error is computed
    across replications only.
    """
    reps = [_coupled_error_once(model, cfg, epsilon,
                                noise_mod.NoisePlan(seed).derive(4242, rep))
            for rep in range(cfg.replications)]
    errs = np.array([r["error_sq"] for r in reps])
    out = {
        "epsilon": epsilon,
        "error_sq": float(errs.mean()),
        "std_error": float(errs.std(ddof=1) / math.sqrt(len(errs))) if len(errs) > 1 else 0.0,
        "aux_gap": float(np.mean([r["aux_gap"] for r in reps])),
        "increment_stat": float(np.mean([r["increment_stat"] for r in reps])),
    }
    return out


def _rate_job(cfg_dict: dict, eps_index: int, rep: int) -> tuple:
    cfg = StudyConfig(**cfg_dict)
    model = cfg.build_model()
    epsilon = cfg.epsilon_grid[eps_index]
    res = _coupled_error_once(model, cfg, epsilon,
                              noise_mod.NoisePlan(cfg.seed).derive(4242, rep))
    return (eps_index, rep, res["error_sq"], res["aux_gap"], res["increment_stat"])


# ---------------------------------------------------------------------------
# rate study and report
# ---------------------------------------------------------------------------

@dataclass
class RateRow:
    epsilon: float
    error_sq: float
    std_error: float
    aux_gap: float
    increment_stat: float


@dataclass
class RateReport:
    rows: list
    slope: float
    intercept: float
    r_squared: float
    slope_error_rate: float
    threshold: float
    strictly_decreasing: bool
    verdict: str
    incomplete: bool = False
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def fit_loglog(epsilons, errors_sq):
    """Least-squares slope/intercept/r^2 of log(error_sq) vs log(epsilon)."""
    x = np.log(np.asarray(epsilons, dtype=float))
    y = np.log(np.asarray(errors_sq, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def assemble_report(rows, incomplete=False, failures=()) -> RateReport:
    eps = [r.epsilon for r in rows]
    errs = [r.error_sq for r in rows]
    if len(rows) >= 2 and all(e > 0 for e in errs):
        slope, intercept, r2 = fit_loglog(eps, errs)
    else:
        slope, intercept, r2 = float("nan"), float("nan"), float("nan")
    decreasing = all(b < a for a, b in zip(errs[:-1], errs[1:]))
    passed = (not incomplete and np.isfinite(slope)
              and slope >= ERROR_SQ_SLOPE_THRESHOLD and decreasing)
    return RateReport(rows=list(rows), slope=slope, intercept=intercept,
                      r_squared=r2, slope_error_rate=slope / 2.0 if np.isfinite(slope) else slope,
                      threshold=ERROR_SQ_SLOPE_THRESHOLD,
                      strictly_decreasing=decreasing,
                      verdict="pass" if passed else "fail",
                      incomplete=incomplete, failures=list(failures))


def run_rate_study(cfg: StudyConfig, error_fn=None) -> RateReport:
    """Full epsilon sweep with the configured worker count.

    ``error_fn`` is a test hook: when given, it supplies error_sq(epsilon)
    directly and no simulation runs.  Grid points that blow up are recorded
    and flagged; the report is then marked incomplete.
    """
    if len(cfg.epsilon_grid) < 3:
        raise ConfigError("epsilon_grid: a rate study needs at least 3 grid points")
    if error_fn is not None:
        rows = [RateRow(e, float(error_fn(e)), 0.0, 0.0, 0.0) for e in cfg.epsilon_grid]
        return assemble_report(rows)

    jobs = [(i, rep) for i in range(len(cfg.epsilon_grid))
            for rep in range(cfg.replications)]
    results = {}
    failures = []
    if cfg.workers > 1:
        cfg_dict = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futs = {pool.submit(_rate_job, cfg_dict, i, rep): (i, rep) for i, rep in jobs}
            for fut, key in futs.items():
                try:
                    i, rep, err, aux, inc = fut.result()
                    results[(i, rep)] = (err, aux, inc)
                except Exception as exc:  # blow-ups surface per grid point
                    failures.append((cfg.epsilon_grid[key[0]], repr(exc)))
    else:
        model = cfg.build_model()
        for i, rep in jobs:
            try:
                res = _coupled_error_once(model, cfg, cfg.epsilon_grid[i],
                                          noise_mod.NoisePlan(cfg.seed).derive(4242, rep))
                results[(i, rep)] = (res["error_sq"], res["aux_gap"], res["increment_stat"])
            except Exception as exc:
                failures.append((cfg.epsilon_grid[i], repr(exc)))

    rows = []
    incomplete = False
    for i, epsilon in enumerate(cfg.epsilon_grid):
        per = [results[(i, rep)] for rep in range(cfg.replications) if (i, rep) in results]
        if len(per) < cfg.replications:
            incomplete = True
            continue
        errs = np.array([p[0] for p in per])
        se = float(errs.std(ddof=1) / math.sqrt(len(errs))) if len(errs) > 1 else 0.0
        rows.append(RateRow(epsilon, float(errs.mean()), se,
                            float(np.mean([p[1] for p in per])),
                            float(np.mean([p[2] for p in per]))))
    return assemble_report(rows, incomplete=incomplete, failures=failures)


def run_aux_diagnostic(cfg: StudyConfig, epsilon: float, deltas=None) -> list:
    """Time-integrated fast-vs-frozen-block gap for a ladder of block sizes.

    Default ladder: delta in {eps, eps^(2/3), eps^(1/2)}.  Returns one dict
    per delta with the gap and the gap/delta ratio (the bound shape is linear
    in delta).
    """
    model = cfg.build_model()
    params = cfg.params_for(epsilon)
    x0, y0 = cfg.initial_states(model)
    if deltas is None:
        deltas = [epsilon, epsilon ** (2.0 / 3.0), epsilon ** 0.5]
    out = []
    for d in deltas:
        steps = max(1, round(d / params.h_micro))
        d_eff = steps * params.h_micro
        gaps = []
        for rep in range(cfg.replications):
            plan = noise_mod.NoisePlan(cfg.seed).derive(777, rep)
            runner = FullRunner(model, x0, y0, cfg.n_particles, params, plan,
                                aux_delta=d_eff, context=f"aux delta={d_eff:g}")
            runner.run()
            gaps.append(runner.aux_gap)
        gap = float(np.mean(gaps))
        out.append({"delta": d_eff, "gap": gap, "gap_over_delta": gap / d_eff})
    return out


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    return f"{v:.17g}"


def write_report(report: RateReport, out_dir: str) -> dict:
    """Emit rate_report.csv, fit.csv and a plain-text summary; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    rate_path = os.path.join(out_dir, "rate_report.csv")
    with open(rate_path, "w") as fh:
        fh.write("epsilon,error_sq,std_error,aux_gap,increment_stat\n")
        for r in report.rows:
            fh.write(",".join(_fmt(v) for v in
                              (r.epsilon, r.error_sq, r.std_error,
                               r.aux_gap, r.increment_stat)) + "\n")
    fit_path = os.path.join(out_dir, "fit.csv")
    with open(fit_path, "w") as fh:
        fh.write("slope,intercept,r_squared,verdict\n")
        fh.write(f"{_fmt(report.slope)},{_fmt(report.intercept)},"
                 f"{_fmt(report.r_squared)},{report.verdict}\n")
    summary_path = os.path.join(out_dir, "summary.txt")
    with open(summary_path, "w") as fh:
        fh.write("strong averaging rate study\n")
        fh.write(f"grid points: {len(report.rows)}\n")
        for r in report.rows:
            fh.write(f"  epsilon={r.epsilon:g}  error_sq={r.error_sq:.6g}"
                     f"  std_error={r.std_error:.3g}  aux_gap={r.aux_gap:.4g}"
                     f"  increment_stat={r.increment_stat:.4g}\n")
        fh.write(f"fitted error_sq slope: {report.slope:.4f}"
                 f" (error-rate convention: {report.slope_error_rate:.4f})\n")
        fh.write(f"threshold on error_sq slope: {report.threshold:.4f}"
                 f" (= 2/3 with {SLOPE_TOLERANCE_FRACTION:.0%} tolerance)\n")
        fh.write(f"strictly decreasing: {report.strictly_decreasing}\n")
        fh.write(f"verdict: {report.verdict}\n")
        if report.incomplete:
            fh.write("WARNING: report incomplete; failed grid points:\n")
            for eps, msg in report.failures:
                fh.write(f"  epsilon={eps:g}: {msg}\n")
    return {"rate_report": rate_path, "fit": fit_path, "summary": summary_path}


def read_rate_report(path: str) -> list:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            vals = [float(v) for v in line.strip().split(",")]
            rows.append(RateRow(*vals))
    if header != ["epsilon", "error_sq", "std_error", "aux_gap", "increment_stat"]:
        raise ConfigError("rate_report.csv: unexpected header")
    return rows

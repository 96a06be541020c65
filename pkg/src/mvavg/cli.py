"""Command-line front end.

Subcommands: simulate, freeze, average, rate-study, probe, aux.
Exit codes: 0 success, 2 config error, 3 blow-up, 4 rate-study verdict fail.
The MVAVG_SEED environment variable overrides the config-file seed; an
explicit --seed flag overrides both.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import noise as noise_mod
from .averaging import (FrozenParams, MixingFailure, default_frozen_params,
                        estimate_fbar, simulate_averaged, write_fbar_cache)
from .integrate import BlowUpError, TrajectoryRecorder, simulate_full
from .measure import MeasureMoments
from .models import run_probe_suite
from .study import (ConfigError, StudyConfig, config_from_dict, run_aux_diagnostic,
                    run_rate_study, write_report)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_cfg(args) -> StudyConfig:
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if args.model:
        raw["model"] = args.model
    if args.out:
        raw["out_dir"] = args.out
    if args.workers is not None:
        raw["workers"] = args.workers
    for kv in args.param or []:
        if "=" not in kv:
            raise ConfigError(f"--param expects key=value, got {kv!r}")
        key, val = kv.split("=", 1)
        raw.setdefault("model_params", {})[key] = _parse_value(val)
    cfg = config_from_dict(raw)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    model = cfg.build_model()
    epsilon = args.epsilon if args.epsilon is not None else cfg.epsilon_grid[0]
    params = cfg.params_for(epsilon)
    x0, y0 = cfg.initial_states(model)
    rec = TrajectoryRecorder(stride_steps=max(1, params.n_steps // cfg.record_points),
                             record_fast=True)
    simulate_full(model, x0, y0, cfg.n_particles, params,
                  noise_mod.NoisePlan(cfg.seed), recorder=rec)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "trajectories.csv")
    rec.dump_csv(path)
    print(f"simulated {cfg.model} at epsilon={epsilon:g} "
          f"({params.n_steps} steps, N={cfg.n_particles}); wrote {path}")
    if rec.moment_flag:
        print("WARNING: fast second-moment diagnostic exceeded its bound")
    return 0


def _cmd_freeze(args) -> int:
    cfg = _load_cfg(args)
    model = cfg.build_model()
    x = np.array([float(v) for v in args.x.split(",")])
    mu_mean = (np.array([float(v) for v in args.mu_mean.split(",")])
               if args.mu_mean else np.zeros(model.slow_dim))
    mu = MeasureMoments(mean=mu_mean, second_moment=args.mu_m2)
    fp = default_frozen_params(model, x, mu, sample_horizon=args.horizon,
                               h_micro=args.h, replicas=args.replicas)
    if args.burn_in is not None:
        fp = FrozenParams(x_frozen=x, mu_frozen=mu, y_init=fp.y_init,
                          burn_in=args.burn_in, sample_horizon=args.horizon,
                          h_micro=args.h, replicas=args.replicas)
    est = estimate_fbar(model, fp, noise_mod.NoisePlan(cfg.seed))
    for i, (v, se) in enumerate(zip(est.fbar, est.std_error)):
        print(f"fbar[{i}] = {v:.10g} +- {se:.3g}  (n_effective={est.n_effective})")
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "fbar_cache.csv")
    write_fbar_cache([(float(x[0]), float(mu.mean[0]), mu.second_moment,
                       float(est.fbar[0]), float(est.std_error[0]))], path)
    print(f"wrote {path}")
    return 0


def _cmd_average(args) -> int:
    cfg = _load_cfg(args)
    model = cfg.build_model()
    epsilon = args.epsilon if args.epsilon is not None else cfg.epsilon_grid[0]
    params = cfg.params_for(epsilon)
    x0, _ = cfg.initial_states(model)
    rec = TrajectoryRecorder(stride_steps=max(1, params.n_steps // cfg.record_points))
    rec = simulate_averaged(model, x0, cfg.n_particles, params,
                            noise_mod.NoisePlan(cfg.seed), mode=cfg.averaged_mode,
                            hmm=cfg.hmm_config() if cfg.averaged_mode == "hmm" else None,
                            recorder=rec, collect_fbar_cache=True)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "averaged_trajectories.csv")
    rec.dump_csv(path)
    print(f"averaged run of {cfg.model} ({cfg.averaged_mode} fbar, "
          f"{params.n_steps} steps); wrote {path}")
    if rec.fbar_cache:
        cache_path = os.path.join(cfg.out_dir, "fbar_cache.csv")
        write_fbar_cache(rec.fbar_cache, cache_path)
        print(f"wrote {cache_path}")
    return 0


def _cmd_rate_study(args) -> int:
    cfg = _load_cfg(args)
    report = run_rate_study(cfg)
    paths = write_report(report, cfg.out_dir)
    with open(paths["summary"]) as fh:
        sys.stdout.write(fh.read())
    return 0 if report.passed else 4


def _cmd_probe(args) -> int:
    cfg = _load_cfg(args)
    model = cfg.build_model()
    reports = run_probe_suite(model, n_samples=args.samples, seed=cfg.seed)
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        line = (f"{status} {model.model_id} {rep.property}: "
                f"worst_margin={rep.worst_margin:.3g} over {rep.samples} samples")
        if rep.violating_witness is not None:
            line += f" (witness slack {rep.violating_witness['slack']:.3g})"
        print(line)
    return 0


def _cmd_aux(args) -> int:
    cfg = _load_cfg(args)
    epsilon = args.epsilon if args.epsilon is not None else cfg.epsilon_grid[0]
    table = run_aux_diagnostic(cfg, epsilon)
    print("delta,gap,gap_over_delta")
    for row in table:
        print(f"{row['delta']:.17g},{row['gap']:.17g},{row['gap_over_delta']:.17g}")
    gaps = [row["gap"] for row in table]
    print(f"gap monotone increasing in delta: {all(a < b for a, b in zip(gaps, gaps[1:]))}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "aux_report.csv")
    with open(path, "w") as fh:
        fh.write("delta,gap,gap_over_delta\n")
        for row in table:
            fh.write(f"{row['delta']:.17g},{row['gap']:.17g},{row['gap_over_delta']:.17g}\n")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON study config")
    common.add_argument("--seed", type=int, help="64-bit seed override")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--model", help="registered model id")
    common.add_argument("--param", action="append", metavar="KEY=VALUE",
                        help="model parameter override (repeatable)")

    p = argparse.ArgumentParser(prog="mvavg",
                                description="slow-fast mean-field averaging studies")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", parents=[common],
                        help="one full two-time-scale run; dumps trajectories")
    sp.add_argument("--epsilon", type=float)
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("freeze", parents=[common],
                        help="estimate fbar at a frozen (x, measure-moments) point")
    sp.add_argument("--x", required=True, help="frozen slow state (comma separated)")
    sp.add_argument("--mu-mean", help="measure mean (comma separated)")
    sp.add_argument("--mu-m2", type=float, default=0.0, help="measure second moment")
    sp.add_argument("--burn-in", type=float, default=None)
    sp.add_argument("--horizon", type=float, default=200.0)
    sp.add_argument("--h", type=float, default=0.01)
    sp.add_argument("--replicas", type=int, default=4)
    sp.set_defaults(func=_cmd_freeze)

    sp = sub.add_parser("average", parents=[common],
                        help="averaged-equation run; dumps trajectories and fbar cache")
    sp.add_argument("--epsilon", type=float)
    sp.set_defaults(func=_cmd_average)

    sp = sub.add_parser("rate-study", parents=[common],
                        help="full epsilon sweep with report files")
    sp.set_defaults(func=_cmd_rate_study)

    sp = sub.add_parser("probe", parents=[common],
                        help="randomized hypothesis probes for the model")
    sp.add_argument("--samples", type=int, default=10000)
    sp.set_defaults(func=_cmd_probe)

    sp = sub.add_parser("aux", parents=[common],
                        help="block-frozen auxiliary gap diagnostic")
    sp.add_argument("--epsilon", type=float)
    sp.set_defaults(func=_cmd_aux)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return 3
    except MixingFailure as exc:
        print(f"mixing failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

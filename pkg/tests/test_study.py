import json
import math
import os

import numpy as np
import pytest

from mvavg.cli import main
from mvavg.models import build_model
from mvavg.noise import NoisePlan
from mvavg.study import (ConfigError, StudyConfig, _coupled_error_once,
                         assemble_report, config_from_dict, fit_loglog,
                         load_config, read_rate_report, run_rate_study,
                         strong_error, write_report)


def write_cfg(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(kw))
    return str(path)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_minimal_config_fills_defaults(tmp_path):
    cfg = load_config(write_cfg(tmp_path, model="linear-benchmark"))
    assert cfg.epsilon_grid == (0.1, 0.05, 0.02, 0.01, 0.005)
    assert cfg.n_particles == 1000
    assert cfg.replications == 8
    assert cfg.averaged_mode == "exact"
    pde = load_config(write_cfg(tmp_path, model="porous-media-1d"))
    assert pde.n_particles == 200


def test_ascending_grid_rejected(tmp_path):
    with pytest.raises(ConfigError, match="epsilon grid must be strictly decreasing"):
        load_config(write_cfg(tmp_path, model="linear-benchmark",
                              epsilon_grid=[0.01, 0.05, 0.1]))


def test_unknown_key_named(tmp_path):
    with pytest.raises(ConfigError, match="not_a_key"):
        load_config(write_cfg(tmp_path, model="linear-benchmark", not_a_key=1))


def test_bad_values_name_offending_key(tmp_path):
    with pytest.raises(ConfigError, match="replications"):
        load_config(write_cfg(tmp_path, model="linear-benchmark", replications=0))
    with pytest.raises(ConfigError, match="epsilon_grid"):
        load_config(write_cfg(tmp_path, model="linear-benchmark", epsilon_grid=[2.0, 1.5]))
    with pytest.raises(ConfigError, match="model"):
        load_config(write_cfg(tmp_path, model="nope"))
    with pytest.raises(ConfigError, match="model_params"):
        load_config(write_cfg(tmp_path, model="linear-benchmark",
                              model_params={"gamma": -1.0}))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))


def test_env_seed_override(tmp_path, monkeypatch):
    path = write_cfg(tmp_path, model="linear-benchmark", seed=1)
    monkeypatch.setenv("MVAVG_SEED", "777")
    assert load_config(path).seed == 777
    monkeypatch.setenv("MVAVG_SEED", "not-an-int")
    with pytest.raises(ConfigError, match="MVAVG_SEED"):
        load_config(path)


def test_measure_dependent_needs_two_particles():
    with pytest.raises(ConfigError, match="n_particles"):
        StudyConfig(model="linear-benchmark", n_particles=1)
    # a single particle is fine when the model ignores the measure
    cfg = StudyConfig(model="linear-benchmark", n_particles=1,
                      model_params={"a12": 0.0, "k2": 0.0})
    assert cfg.n_particles == 1


# ---------------------------------------------------------------------------
# fit and verdict logic
# ---------------------------------------------------------------------------

def test_synthetic_power_law_passes():
    cfg = StudyConfig(model="linear-benchmark", replications=1)
    report = run_rate_study(cfg, error_fn=lambda e: e ** (2.0 / 3.0))
    assert report.slope == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert report.strictly_decreasing
    assert report.verdict == "pass"


def test_synthetic_flat_errors_fail():
    cfg = StudyConfig(model="linear-benchmark", replications=1)
    report = run_rate_study(cfg, error_fn=lambda e: 0.5)
    assert not report.strictly_decreasing
    assert report.verdict == "fail"


def test_verdict_reproducible_by_independent_least_squares():
    cfg = StudyConfig(model="linear-benchmark", replications=1)
    report = run_rate_study(cfg, error_fn=lambda e: 3.0 * e ** 0.9)
    x = np.log(np.array([r.epsilon for r in report.rows]))
    y = np.log(np.array([r.error_sq for r in report.rows]))
    n = len(x)
    sx, sy, sxx, sxy = x.sum(), y.sum(), (x * x).sum(), (x * y).sum()
    slope = (n * sxy - sx * sy) / (n * sxx - sx * sx)
    assert abs(slope - report.slope) < 1e-10
    assert report.verdict == ("pass" if slope >= report.threshold
                              and report.strictly_decreasing else "fail")


def test_fit_loglog_r_squared_perfect_line():
    slope, intercept, r2 = fit_loglog([0.1, 0.01, 0.001], [0.2, 0.02, 0.002])
    assert slope == pytest.approx(1.0, abs=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# strong error behaviour
# ---------------------------------------------------------------------------

def test_decoupled_system_has_zero_error():
    cfg = StudyConfig(model="linear-benchmark", model_params={"f0": 0.0},
                      n_particles=32, replications=2, t_end=0.5, seed=3)
    m = build_model("linear-benchmark", {"f0": 0.0})
    res = strong_error(m, cfg, 0.05, cfg.seed)
    assert res["error_sq"] <= 1e-20


def test_strong_error_reports_replication_spread():
    cfg = StudyConfig(model="linear-benchmark", n_particles=64, replications=3,
                      t_end=0.25, seed=5)
    m = build_model("linear-benchmark")
    res = strong_error(m, cfg, 0.05, cfg.seed)
    assert res["error_sq"] > 0.0
    assert res["std_error"] > 0.0
    assert res["aux_gap"] > 0.0
    assert res["increment_stat"] > 0.0


def test_crn_coupling_reduces_variance():
    # common random numbers vs independent slow noise, once at eps = 0.05
    base = dict(model="linear-benchmark", n_particles=256, replications=4,
                t_end=0.5, seed=7)
    m = build_model("linear-benchmark")
    crn = strong_error(m, StudyConfig(**base, crn=True), 0.05, 7)
    ind = strong_error(m, StudyConfig(**base, crn=False), 0.05, 7)
    assert crn["std_error"] < ind["std_error"]
    assert crn["error_sq"] < ind["error_sq"]


def test_sup_dominates_terminal_error():
    cfg = StudyConfig(model="linear-benchmark", n_particles=16, replications=1,
                      t_end=0.25, seed=9)
    m = build_model("linear-benchmark")
    params = cfg.params_for(0.05)
    from mvavg.averaging import AveragedRunner
    from mvavg.integrate import FullRunner
    from mvavg.models import slow_norm_sq
    plan = NoisePlan(9).derive(4242, 0)
    res = _coupled_error_once(m, cfg, 0.05, plan)
    full = FullRunner(m, *cfg.initial_states(m), cfg.n_particles, params, plan).run()
    avg = AveragedRunner(m, cfg.initial_states(m)[0], cfg.n_particles, params,
                         plan, mode="exact").run()
    terminal = float(np.mean(slow_norm_sq(m, full.X - avg.X)))
    assert res["error_sq"] >= terminal - 1e-15


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def test_report_roundtrip_full_precision(tmp_path):
    cfg = StudyConfig(model="linear-benchmark", replications=1)
    report = run_rate_study(cfg, error_fn=lambda e: math.pi * e ** 0.7)
    paths = write_report(report, str(tmp_path))
    rows = read_rate_report(paths["rate_report"])
    for got, want in zip(rows, report.rows):
        assert got.epsilon == want.epsilon
        assert got.error_sq == want.error_sq  # exact: 17 significant digits
    fit_line = open(paths["fit"]).readlines()[1].strip().split(",")
    assert float(fit_line[0]) == report.slope
    assert fit_line[3] == report.verdict
    assert os.path.exists(paths["summary"])


def test_rate_report_header_contract(tmp_path):
    cfg = StudyConfig(model="linear-benchmark", replications=1)
    report = run_rate_study(cfg, error_fn=lambda e: e)
    paths = write_report(report, str(tmp_path))
    header = open(paths["rate_report"]).readline().strip()
    assert header == "epsilon,error_sq,std_error,aux_gap,increment_stat"


def test_workers_give_identical_results(tmp_path):
    base = dict(model="linear-benchmark", n_particles=64,
                epsilon_grid=[0.1, 0.05, 0.02], replications=2, t_end=0.25, seed=13)
    r1 = run_rate_study(StudyConfig(**base, workers=1))
    r2 = run_rate_study(StudyConfig(**base, workers=3))
    for a, b in zip(r1.rows, r2.rows):
        assert a.error_sq == b.error_sq
        assert a.aux_gap == b.aux_gap


# ---------------------------------------------------------------------------
# CLI exit codes and interfaces
# ---------------------------------------------------------------------------

def test_cli_config_error_is_exit_2(tmp_path):
    bad = write_cfg(tmp_path, model="linear-benchmark", epsilon_grid=[0.1, 0.5])
    assert main(["rate-study", "--config", bad]) == 2
    assert main(["simulate", "--model", "nope"]) == 2


def test_cli_blowup_is_exit_3(tmp_path):
    assert main(["simulate", "--model", "broken-antidissipative",
                 "--epsilon", "0.01", "--seed", "1",
                 "--out", str(tmp_path)]) == 3


def test_cli_rate_study_pass_and_fail(tmp_path, capsys):
    ok = write_cfg(tmp_path, model="linear-benchmark", n_particles=64,
                   epsilon_grid=[0.1, 0.05, 0.02], replications=2, t_end=0.25,
                   seed=17, out_dir=str(tmp_path / "ok"))
    assert main(["rate-study", "--config", ok]) == 0
    assert (tmp_path / "ok" / "rate_report.csv").exists()
    # decoupled system: error is identically zero, no slope exists -> fail
    bad = write_cfg(tmp_path, model="linear-benchmark",
                    model_params={"f0": 0.0}, n_particles=16,
                    epsilon_grid=[0.1, 0.05, 0.02], replications=1, t_end=0.1,
                    seed=17, out_dir=str(tmp_path / "bad"))
    assert main(["rate-study", "--config", bad]) == 4
    capsys.readouterr()


def test_cli_param_overrides_and_freeze(tmp_path, capsys):
    rc = main(["freeze", "--model", "linear-benchmark",
               "--param", "gamma=1.0", "--param", "k1=1.0",
               "--param", "k2=0.0", "--param", "sigma2=0.5",
               "--x", "2.0", "--horizon", "50", "--seed", "123",
               "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "fbar[0] = " in out
    cache = (tmp_path / "fbar_cache.csv").read_text().splitlines()
    assert cache[0] == "x,mu_mean,mu_m2,fbar,std_error"
    x, mu_mean, mu_m2, fbar, se = map(float, cache[1].split(","))
    assert abs(fbar - 2.0) < 0.2


def test_cli_aux_writes_table(tmp_path, capsys):
    cfg = write_cfg(tmp_path, model="linear-benchmark", n_particles=64,
                    replications=1, t_end=0.25, seed=19,
                    out_dir=str(tmp_path / "aux"))
    assert main(["aux", "--config", cfg, "--epsilon", "0.05"]) == 0
    lines = (tmp_path / "aux" / "aux_report.csv").read_text().splitlines()
    assert lines[0] == "delta,gap,gap_over_delta"
    assert len(lines) == 4
    capsys.readouterr()


def test_cli_average_dumps_cache(tmp_path, capsys):
    cfg = write_cfg(tmp_path, model="linear-benchmark", n_particles=8,
                    replications=1, t_end=0.1, seed=21,
                    out_dir=str(tmp_path / "avg"))
    assert main(["average", "--config", cfg, "--epsilon", "0.1"]) == 0
    assert (tmp_path / "avg" / "averaged_trajectories.csv").exists()
    assert (tmp_path / "avg" / "fbar_cache.csv").exists()
    capsys.readouterr()


def test_plaplace_reduced_rate_study_decreases():
    # desk-scale check of the fourth registered model's error ordering
    cfg = StudyConfig(model="plaplace-1d",
                      model_params={"p": 4.0, "n_interior": 15},
                      n_particles=64, epsilon_grid=[0.1, 0.05, 0.02],
                      replications=2, t_end=0.5, seed=23)
    report = run_rate_study(cfg)
    assert not report.incomplete
    errs = [r.error_sq for r in report.rows]
    assert all(a > b for a, b in zip(errs, errs[1:])), errs

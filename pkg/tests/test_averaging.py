import math
import warnings

import numpy as np
import pytest

from mvavg.averaging import (AveragedRunner, FrozenParams, HmmConfig, MixingFailure,
                             default_frozen_params, estimate_fbar,
                             estimate_mixing_rate, frozen_simulate,
                             simulate_averaged)
from mvavg.integrate import FullRunner, TrajectoryRecorder, resolve_params
from mvavg.measure import MeasureMoments
from mvavg.models import build_model, empirical_view
from mvavg.noise import NoisePlan

# Independent oracles for the cubic model's averaged drift at (x=1, mu=delta_0),
# tabulated before the build by scripts/fbar_oracle_cubic.py:
#   stationary-density quadrature       0.37885564
#   10^7-step Euler-Maruyama long run   0.378441 +- 0.001364  (h = 0.005)
FBAR_CUBIC_QUAD = 0.37885564
FBAR_CUBIC_LONGRUN = 0.378441
FBAR_CUBIC_LONGRUN_SE = 0.001364

DELTA0 = MeasureMoments(mean=np.array([0.0]), second_moment=0.0)


def linear_ou(gamma=1.0, k1=1.0, k2=0.0, sigma2=0.5, **kw):
    return build_model("linear-benchmark",
                       dict(gamma=gamma, k1=k1, k2=k2, sigma2=sigma2, **kw))


# ---------------------------------------------------------------------------
# frozen simulation
# ---------------------------------------------------------------------------

def test_frozen_long_run_mean_matches_invariant_mean():
    m = linear_ou()
    fp = FrozenParams([2.0], DELTA0, [0.0], burn_in=8.0, sample_horizon=150.0,
                      h_micro=0.01, replicas=2)
    _, paths = frozen_simulate(m, fp, NoisePlan(1), n_paths=2)
    samples = paths[:, :, 0].ravel()
    se = samples.std(ddof=1) / math.sqrt(150.0 / 1.0)  # ~1 correlation time unit
    assert abs(samples.mean() - 2.0) < 3 * se + 0.02


def test_frozen_deterministic_contraction_without_noise():
    # sigma2 = 0: geometric approach to the fixed point, constant after burn-in
    m = linear_ou(sigma2=0.0)
    fp = FrozenParams([2.0], DELTA0, [5.0], burn_in=30.0, sample_horizon=5.0,
                      h_micro=0.01, replicas=1)
    _, paths = frozen_simulate(m, fp, NoisePlan(2))
    assert np.allclose(paths[:, 0, 0], 2.0, atol=1e-10)
    fp0 = FrozenParams([2.0], DELTA0, [5.0], burn_in=0.0, sample_horizon=3.0,
                       h_micro=0.01, replicas=1)
    t, p = frozen_simulate(m, fp0, NoisePlan(2))
    gaps = np.abs(p[:, 0, 0] - 2.0)
    assert np.allclose(gaps, 3.0 * np.exp(-t), atol=1e-12)


def test_shared_noise_runs_cancel_exactly():
    # additive noise: the difference of two shared-noise copies is the
    # deterministic flow |y - y'| e^{-gamma t}, exactly
    m = linear_ou()
    mk = dict(burn_in=0.0, sample_horizon=10.0, h_micro=0.01, replicas=1)
    t, p1 = frozen_simulate(m, FrozenParams([2.0], DELTA0, [1.0], **mk), NoisePlan(55))
    _, p2 = frozen_simulate(m, FrozenParams([2.0], DELTA0, [-1.0], **mk), NoisePlan(55))
    gap = np.abs(p1[:, 0, 0] - p2[:, 0, 0])
    assert np.max(np.abs(gap - 2.0 * np.exp(-t))) < 1e-8


# ---------------------------------------------------------------------------
# fbar estimation
# ---------------------------------------------------------------------------

def test_estimate_fbar_linear_oracle():
    m = linear_ou()
    fp = FrozenParams([2.0], DELTA0, [0.0], burn_in=8.0, sample_horizon=100.0,
                      h_micro=0.01, replicas=4)
    est = estimate_fbar(m, fp, NoisePlan(123))
    assert abs(est.fbar[0] - 2.0) < 3 * est.std_error[0]
    assert est.n_effective == 80


def test_estimate_fbar_constant_integrand():
    # f independent of y: the ergodic average is exact with zero error bars
    m = linear_ou(f0=0.0)
    fp = FrozenParams([1.0], DELTA0, [0.3], burn_in=1.0, sample_horizon=5.0,
                      h_micro=0.01, replicas=2)
    est = estimate_fbar(m, fp, NoisePlan(4))
    assert est.fbar[0] == 0.0
    assert est.std_error[0] == 0.0


def test_estimate_fbar_refuses_short_horizon():
    m = linear_ou()
    fp = FrozenParams([1.0], DELTA0, [0.0], burn_in=1.0, sample_horizon=0.1,
                      h_micro=0.01, replicas=1)
    with pytest.raises(ValueError, match="sample_horizon"):
        estimate_fbar(m, fp, NoisePlan(5))


def test_estimate_fbar_error_shrinks_with_horizon():
    # doubling the horizon shrinks the standard error by ~ 1/sqrt(2)
    m = linear_ou()
    ses = []
    for horizon in (60.0, 120.0):
        fp = FrozenParams([2.0], DELTA0, [0.0], burn_in=8.0, sample_horizon=horizon,
                          h_micro=0.01, replicas=6)
        ses.append(estimate_fbar(m, fp, NoisePlan(6)).std_error[0])
    ratio = ses[0] / ses[1]
    assert abs(ratio - math.sqrt(2.0)) < 0.3 * math.sqrt(2.0)


def test_estimate_fbar_cubic_matches_independent_oracles():
    m = build_model("mvsde-cubic")
    fp = FrozenParams([1.0], DELTA0, [0.0], burn_in=8.0, sample_horizon=300.0,
                      h_micro=0.005, replicas=8)
    est = estimate_fbar(m, fp, NoisePlan(31))
    comb = 3.0 * math.sqrt(est.std_error[0] ** 2 + FBAR_CUBIC_LONGRUN_SE ** 2)
    assert abs(est.fbar[0] - FBAR_CUBIC_LONGRUN) < comb
    assert abs(est.fbar[0] - FBAR_CUBIC_QUAD) < comb


def test_default_frozen_params_burn_in_rule():
    m = linear_ou(gamma=2.0)
    fp = default_frozen_params(m, [1.0], DELTA0)
    assert fp.burn_in == pytest.approx(8.0 / 2.0)


# ---------------------------------------------------------------------------
# mixing rate
# ---------------------------------------------------------------------------

def test_mixing_rate_exact_for_additive_linear():
    m = linear_ou()
    fp = FrozenParams([2.0], DELTA0, [1.0], burn_in=0.0, sample_horizon=5.0,
                      h_micro=0.01, replicas=1)
    rho = estimate_mixing_rate(m, fp, [-1.0], NoisePlan(7))
    assert abs(rho - 2.0) < 1e-6


def test_mixing_rate_cubic_beats_linear_rate():
    # the cubic term only adds contraction: fitted rate >= 2 kappa
    m = build_model("mvsde-cubic")
    fp = FrozenParams([1.0], DELTA0, [1.0], burn_in=0.0, sample_horizon=2.0,
                      h_micro=0.005, replicas=1)
    rho = estimate_mixing_rate(m, fp, [-1.0], NoisePlan(8), n_pairs=64)
    assert rho >= 2.0 * m.constants["kappa"]


def test_mixing_rate_failure_on_antidissipative():
    m = build_model("broken-antidissipative")
    fp = FrozenParams([0.0], DELTA0, [1.0], burn_in=0.0, sample_horizon=5.0,
                      h_micro=0.01, replicas=1)
    with pytest.raises(MixingFailure):
        estimate_mixing_rate(m, fp, [-1.0], NoisePlan(9))


def test_mixing_rate_requires_distinct_starts():
    m = linear_ou()
    fp = FrozenParams([0.0], DELTA0, [1.0], burn_in=0.0, sample_horizon=5.0,
                      h_micro=0.01, replicas=1)
    with pytest.raises(ValueError):
        estimate_mixing_rate(m, fp, [1.0], NoisePlan(10))


def test_exponential_forgetting_of_window_averages():
    # sigma2 = 0: windowed time averages of f - fbar decay monotonically
    m = linear_ou(sigma2=0.0)
    fp = FrozenParams([2.0], DELTA0, [6.0], burn_in=0.0, sample_horizon=8.0,
                      h_micro=0.01, replicas=1)
    t, p = frozen_simulate(m, fp, NoisePlan(11))
    fvals = p[:, 0, 0]  # f = f0 * y with f0 = 1
    fbar = 2.0
    window = 100  # one time unit
    starts = range(0, len(fvals) - window, window)
    devs = [abs(np.mean(fvals[s:s + window]) - fbar) for s in starts]
    assert all(a > b for a, b in zip(devs, devs[1:]))


def test_frozen_second_moment_bound_stable_across_seeds():
    # sample second moment <= C (1 + ||x||^2 + mu(||.||^2)) with stable C
    m = linear_ou()
    mu = MeasureMoments(mean=np.array([1.0]), second_moment=2.0)
    cs = []
    for seed in (21, 22):
        fp = FrozenParams([3.0], mu, [0.0], burn_in=5.0, sample_horizon=50.0,
                          h_micro=0.01, replicas=4)
        _, p = frozen_simulate(m, fp, NoisePlan(seed), n_paths=4)
        m2 = float(np.mean(p[:, :, 0] ** 2))
        cs.append(m2 / (1.0 + 9.0 + 2.0))
    assert cs[0] <= 1.0 and cs[1] <= 1.0
    assert abs(cs[0] - cs[1]) < 0.25 * max(cs)


# ---------------------------------------------------------------------------
# averaged equation
# ---------------------------------------------------------------------------

def test_averaged_exact_matches_closed_form_ode():
    # sigma1 = 0, all particles identical: scalar linear ODE
    m = build_model("linear-benchmark", {"sigma1": 0.0})
    c = m.constants
    params = resolve_params(0.05, 1.0)
    rec = simulate_averaged(m, [1.0], 2, params, NoisePlan(12), mode="exact")
    xT = rec.slow_array()[-1][0, 0]
    rate = c["a11"] + c["a12"] + c["f0"] * (c["k1"] + c["k2"]) / c["gamma"]
    h_macro = 1.0 / 200
    assert abs(xT - math.exp(rate)) <= 5 * h_macro


def test_averaged_equals_decoupled_slow_system_when_f_vanishes():
    m = build_model("linear-benchmark", {"f0": 0.0})
    params = resolve_params(0.05, 1.0)
    plan = NoisePlan(9)
    full = FullRunner(m, [1.0], [1.0], 64, params, plan).run()
    avg = AveragedRunner(m, [1.0], 64, params, plan, mode="exact").run()
    assert np.array_equal(full.X, avg.X)


def test_averaged_requires_closed_form_for_exact_mode():
    m = build_model("mvsde-cubic")
    params = resolve_params(0.05, 0.5)
    with pytest.raises(ValueError, match="closed-form"):
        AveragedRunner(m, [1.0], 4, params, NoisePlan(1), mode="exact")


def test_hmm_consistent_with_exact_fbar():
    # same slow noise, fbar estimated instead of closed-form: small gap
    m = build_model("linear-benchmark")
    params = resolve_params(0.05, 0.5)
    ex = AveragedRunner(m, [1.0], 128, params, NoisePlan(21), mode="exact").run()
    hm = AveragedRunner(m, [1.0], 128, params, NoisePlan(21), mode="hmm",
                        hmm=HmmConfig(replicas=2, horizon=20.0)).run()
    gap = abs(float(ex.X.mean()) - float(hm.X.mean()))
    # fbar noise ~ se/step accumulated over T=0.5; generous 3x envelope
    assert gap < 0.02


def test_hmm_warns_on_noisy_fbar():
    m = build_model("linear-benchmark")
    params = resolve_params(0.05, 0.05)
    with pytest.warns(RuntimeWarning, match="fbar standard error"):
        AveragedRunner(m, [1.0], 4, params, NoisePlan(23), mode="hmm",
                       hmm=HmmConfig(replicas=2, horizon=0.4, burn_in_initial=0.2,
                                     warn_fraction=0.001)).run()


def test_simulate_averaged_collects_fbar_cache():
    m = build_model("linear-benchmark")
    params = resolve_params(0.1, 0.2)
    rec = simulate_averaged(m, [1.0], 4, params, NoisePlan(24), mode="exact",
                            collect_fbar_cache=True)
    assert rec.fbar_cache
    x, mu_mean, mu_m2, fbar, se = rec.fbar_cache[0]
    c = m.constants
    assert fbar == pytest.approx((c["f0"] / c["gamma"]) * (c["k1"] * x + c["k2"] * mu_mean))
    assert se == 0.0

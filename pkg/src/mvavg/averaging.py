"""Frozen fast dynamics, ergodic averaging, and the averaged slow equation.

The frozen equation runs the fast coefficients with the slow state x and the
measure snapshot mu held fixed, at unit time scale:

    dY = a2(x, mu, Y) dt + b2(x, mu, Y) dW

Its invariant law defines the averaged coupling drift

    fbar(x, mu) = E_nu [ f(x, mu, Y) ],

estimated here by time averages over one or more frozen paths after a
burn-in, with batch-means error bars.  The averaged slow equation replaces
f(X, mu, Y) by fbar(X, mu) and is driven by the SAME slow-noise streams as
the full system, so full/averaged pairs built on one seed are coupled by
common random numbers at every micro step.

fbar is supplied either in closed form (models that declare ``exact_fbar``)
or by embedded frozen runs refreshed on a macro stride (heterogeneous
multiscale mode); embedded runs are warm-started between refreshes since the
slow state only moves O(stride) per refresh.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import noise as noise_mod
from .integrate import (MultiscaleParams, ParticleEnsemble, TrajectoryRecorder,
                        _check_finite, _FastSolver, _tame)
from .measure import MeasureMoments
from .models import ModelSpec, empirical_view, fast_norm_sq

MIN_SAMPLE_STEPS = 20
BATCHES_PER_PATH = 20


class MixingFailure(RuntimeError):
    """Shared-noise frozen copies refused to contract: no mixing evidence."""


@dataclass
class FrozenParams:
    """One frozen-equation run: frozen arguments, horizon, and resolution."""

    x_frozen: np.ndarray
    mu_frozen: MeasureMoments
    y_init: np.ndarray
    burn_in: float
    sample_horizon: float
    h_micro: float = 0.01
    replicas: int = 4

    def __post_init__(self):
        self.x_frozen = np.asarray(self.x_frozen, dtype=float).reshape(-1)
        self.y_init = np.asarray(self.y_init, dtype=float).reshape(-1)
        if self.burn_in < 0 or self.sample_horizon <= 0:
            raise ValueError("burn_in must be >= 0 and sample_horizon > 0")
        if self.h_micro <= 0:
            raise ValueError("h_micro must be positive")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")


def default_frozen_params(model: ModelSpec, x_frozen, mu_frozen, y_init=None,
                          sample_horizon: float = 200.0, h_micro: float = 0.01,
                          replicas: int = 4) -> FrozenParams:
    """Burn-in 8 / (declared dissipativity rate): residual bias ~ e^-8."""
    lam = model.constants.get("lam", 1.0)
    return FrozenParams(
        x_frozen=x_frozen, mu_frozen=mu_frozen,
        y_init=model.default_y0 if y_init is None else y_init,
        burn_in=8.0 / lam, sample_horizon=sample_horizon,
        h_micro=h_micro, replicas=replicas)


def _frozen_batch(model, fp, noise, paths_y0, n_steps, on_sample=None,
                  start_step=0, chunk=512):
    """March a block of frozen paths; optionally visit each post-step state."""
    P = paths_y0.shape[0]
    Xa = np.broadcast_to(fp.x_frozen, (P, model.slow_dim))
    mu = fp.mu_frozen
    solver = _FastSolver(model, fp.h_micro)
    frc = model.a2_split[1](Xa, mu) if model.a2_split is not None else None
    Z = paths_y0
    k = 0
    while k < n_steps:
        n_sub = min(chunk, n_steps - k)
        xi = noise.gaussians(noise_mod.FROZEN, start_step + k, n_sub, P,
                             model.n_fast_modes)
        for j in range(n_sub):
            Z = solver.step(Xa, mu, Z, xi[j], forcing=frc)
            k += 1
            if on_sample is not None:
                on_sample(k, Z)
        _check_finite(Xa, Z, k * fp.h_micro, "frozen run")
    return Z


def frozen_simulate(model: ModelSpec, fp: FrozenParams, noise: noise_mod.NoisePlan,
                    n_paths: int = 1, record_stride: int = 1):
    """Simulate frozen fast paths; return (times, paths) past the burn-in.

    ``paths`` has shape (n_recorded, n_paths, fast_dim).  Paths share nothing
    but the frozen arguments; path i consumes stream (FROZEN, particle=i).
    With burn_in = 0 the trajectory is returned from t = 0 (initial state
    included), which is what the shared-noise contraction diagnostics use.
    """
    h = fp.h_micro
    n_steps = int(round((fp.burn_in + fp.sample_horizon) / h))
    Z = np.broadcast_to(fp.y_init, (n_paths, model.fast_dim)).copy()
    times, snaps = [], []
    if fp.burn_in == 0:
        times.append(0.0)
        snaps.append(Z.copy())

    def visit(k, Zk):
        t = k * h
        if k % record_stride == 0 and t >= fp.burn_in - 1e-12:
            times.append(t)
            snaps.append(Zk.copy())

    _frozen_batch(model, fp, noise, Z, n_steps, on_sample=visit)
    return np.asarray(times), np.stack(snaps)


@dataclass
class FrozenEstimate:
    """Ergodic estimate of fbar(x, mu) with batch-means error bars."""

    fbar: np.ndarray
    std_error: np.ndarray
    n_effective: int
    mixing_rate_estimate: Optional[float] = None


def estimate_fbar(model: ModelSpec, fp: FrozenParams,
                  noise: noise_mod.NoisePlan) -> FrozenEstimate:
    """Time-average f(x, mu, Y_t) over the post-burn-in frozen path(s).

    Averages ``fp.replicas`` independent paths; the standard error pools
    batch means (>= 20 batches per path) across replicas, so autocorrelation
    on the batch scale is priced in.  Deterministic given the noise seed.
    """
    h = fp.h_micro
    n_burn = int(round(fp.burn_in / h))
    n_samp = int(round(fp.sample_horizon / h))
    if n_samp < MIN_SAMPLE_STEPS:
        raise ValueError(
            f"sample_horizon={fp.sample_horizon} is under {MIN_SAMPLE_STEPS} steps "
            f"at h={h}; refusing a meaningless batch-means estimate")
    batch_len = n_samp // BATCHES_PER_PATH
    n_samp = batch_len * BATCHES_PER_PATH
    R = fp.replicas
    Z = np.broadcast_to(fp.y_init, (R, model.fast_dim)).copy()
    Xa = np.broadcast_to(fp.x_frozen, (R, model.slow_dim))
    mu = fp.mu_frozen

    batch_sums = np.zeros((R, BATCHES_PER_PATH, model.slow_dim))

    def visit(k, Zk):
        j = k - n_burn - 1
        if 0 <= j < n_samp:
            batch_sums[:, j // batch_len, :] += model.f(Xa, mu, Zk)

    _frozen_batch(model, fp, noise, Z, n_burn + n_samp, on_sample=visit)
    batch_means = batch_sums / batch_len
    flat = batch_means.reshape(R * BATCHES_PER_PATH, model.slow_dim)
    fbar = flat.mean(axis=0)
    n_batches = flat.shape[0]
    if n_batches > 1:
        se = flat.std(axis=0, ddof=1) / math.sqrt(n_batches)
    else:
        se = np.zeros(model.slow_dim)
    return FrozenEstimate(fbar=fbar, std_error=se, n_effective=n_batches)


def estimate_mixing_rate(model: ModelSpec, fp: FrozenParams, y_alt,
                         noise: noise_mod.NoisePlan, n_pairs: int = 1,
                         rel_floor: float = 1e-12, min_points: int = 8) -> float:
    """Fit the mean-square contraction rate of two shared-noise frozen copies.

    Runs the frozen dynamics from y_init and y_alt with identical Gaussian
    increments, fits log E||Y - Y'||^2 against t by least squares over the
    window before the gap collapses into the noise floor, and returns the
    decay rate (so additive-noise linear models give exactly twice their
    drift rate).  Raises :class:`MixingFailure` when the gap does not decay.
    """
    y_alt = np.asarray(y_alt, dtype=float).reshape(-1)
    if np.allclose(y_alt, fp.y_init):
        raise ValueError("y_alt must differ from y_init")
    h = fp.h_micro
    n_steps = int(round(fp.sample_horizon / h))
    P = n_pairs
    Xa = np.broadcast_to(fp.x_frozen, (P, model.slow_dim))
    mu = fp.mu_frozen
    solver = _FastSolver(model, h)
    frc = model.a2_split[1](Xa, mu) if model.a2_split is not None else None
    Z1 = np.broadcast_to(fp.y_init, (P, model.fast_dim)).copy()
    Z2 = np.broadcast_to(y_alt, (P, model.fast_dim)).copy()
    gaps = np.empty(n_steps + 1)
    gaps[0] = float(np.mean(fast_norm_sq(model, Z1 - Z2)))
    for chunk_start in range(0, n_steps, 512):
        n_sub = min(512, n_steps - chunk_start)
        xi = noise.gaussians(noise_mod.FROZEN, chunk_start, n_sub, P, model.n_fast_modes)
        for j in range(n_sub):
            Z1 = solver.step(Xa, mu, Z1, xi[j], forcing=frc)
            Z2 = solver.step(Xa, mu, Z2, xi[j], forcing=frc)
            gaps[chunk_start + j + 1] = float(np.mean(fast_norm_sq(model, Z1 - Z2)))
    t = h * np.arange(n_steps + 1)
    valid = gaps > gaps[0] * rel_floor
    # stop at the first collapsed point: later samples are noise-floor chatter
    cut = int(np.argmin(valid)) if not valid.all() else len(gaps)
    t, g = t[:cut], gaps[:cut]
    if len(g) < min_points or not np.all(g > 0):
        raise MixingFailure("gap collapsed too fast to fit a rate")
    slope = np.polyfit(t, np.log(g), 1)[0]
    if slope >= 0:
        raise MixingFailure(
            f"mean-square gap did not decay (fitted rate {-slope:.3g}); "
            "the fast dynamics shows no numerical contraction")
    return float(-slope)


# ---------------------------------------------------------------------------
# averaged slow equation
# ---------------------------------------------------------------------------

@dataclass
class HmmConfig:
    """Knobs for embedded frozen-run estimation of fbar along the macro path."""

    replicas: int = 1
    burn_in_initial: Optional[float] = None
    burn_in: Optional[float] = None
    horizon: Optional[float] = None
    h_frozen: Optional[float] = None
    refresh_stride_steps: Optional[int] = None
    warn_fraction: float = 0.5

    def resolved(self, model: ModelSpec, params: MultiscaleParams):
        lam = model.constants.get("lam", 1.0)
        out = HmmConfig(
            replicas=self.replicas,
            burn_in_initial=self.burn_in_initial if self.burn_in_initial is not None else 8.0 / lam,
            burn_in=self.burn_in if self.burn_in is not None else 1.0 / lam,
            horizon=self.horizon if self.horizon is not None else 12.0 / lam,
            h_frozen=self.h_frozen if self.h_frozen is not None else min(0.02 / lam, 0.02),
            refresh_stride_steps=(self.refresh_stride_steps
                                  if self.refresh_stride_steps is not None
                                  else max(1, params.n_steps // 200)),
            warn_fraction=self.warn_fraction)
        return out


class AveragedRunner:
    """Integrates the averaged slow ensemble on the micro grid.

    The drift a1 + fbar and the slow noise are applied at every micro step
    with the same stream ids the full system uses (common random numbers);
    in "hmm" mode fbar is re-estimated on the refresh stride from embedded
    frozen runs, in "exact" mode it is evaluated from the model's closed
    form at every step.
    """

    def __init__(self, model: ModelSpec, x0, n_particles: int,
                 params: MultiscaleParams, noise: noise_mod.NoisePlan,
                 mode: str = "exact", hmm: Optional[HmmConfig] = None,
                 slow_kind: int = noise_mod.SLOW,
                 recorder: Optional[TrajectoryRecorder] = None,
                 collect_fbar_cache: bool = False,
                 context: str = ""):
        if mode not in ("exact", "hmm"):
            raise ValueError("averaged mode must be 'exact' or 'hmm'")
        if mode == "exact" and model.exact_fbar is None:
            raise ValueError(
                f"model {model.model_id!r} has no closed-form fbar; use hmm mode")
        self.model = model
        self.params = params
        self.noise = noise
        self.mode = mode
        self.slow_kind = slow_kind
        self.recorder = recorder
        self.context = context
        N = n_particles
        self.X = np.broadcast_to(np.asarray(x0, dtype=float).reshape(-1),
                                 (N, model.slow_dim)).copy() \
            if np.asarray(x0).ndim <= 1 else np.array(x0, dtype=float)
        self.h = params.h_micro
        self.sqrt_h = math.sqrt(self.h)
        self.k = 0
        self.n_steps = params.n_steps
        self.fbar_warned = False
        self.fbar_cache: list[tuple] = [] if collect_fbar_cache else None

        if mode == "hmm":
            self.hmm = (hmm or HmmConfig()).resolved(model, params)
            self.frozen_noise = noise.derive(9001)
            self.frozen_solver = _FastSolver(model, self.hmm.h_frozen)
            self._Z = np.broadcast_to(model.default_y0,
                                      (self.hmm.replicas * N, model.fast_dim)).copy()
            self.frozen_step = 0
            self._fbar = None
        if recorder is not None:
            recorder.maybe_record(0, 0.0, self.X, self.X[:, :0])

    def _refresh_fbar(self):
        m = self.model
        N = self.X.shape[0]
        M = self.hmm.replicas
        mu = empirical_view(m, self.X)
        Xa = np.tile(self.X, (M, 1))
        hf = self.hmm.h_frozen
        first = self.frozen_step == 0
        n_burn = int(round((self.hmm.burn_in_initial if first else self.hmm.burn_in) / hf))
        n_samp = max(MIN_SAMPLE_STEPS, int(round(self.hmm.horizon / hf)))
        n_tot = n_burn + n_samp
        Z = self._Z
        frc = m.a2_split[1](Xa, mu) if m.a2_split is not None else None
        acc = np.zeros((M * N, m.slow_dim))
        done = 0
        while done < n_tot:
            n_sub = min(512, n_tot - done)
            xi = self.frozen_noise.gaussians(noise_mod.FROZEN, self.frozen_step + done,
                                             n_sub, M * N, m.n_fast_modes)
            for j in range(n_sub):
                Z = self.frozen_solver.step(Xa, mu, Z, xi[j], forcing=frc)
                if done + j >= n_burn:
                    acc += m.f(Xa, mu, Z)
            done += n_sub
        self._Z = Z
        self.frozen_step += n_tot
        per_rep = (acc / n_samp).reshape(M, N, m.slow_dim)
        self._fbar = per_rep.mean(axis=0)
        if M >= 2:
            se = per_rep.std(axis=0, ddof=1).mean() / math.sqrt(M)
            scale = float(np.mean(np.abs(self._fbar))) + 1e-30
            if se > self.hmm.warn_fraction * scale and not self.fbar_warned:
                warnings.warn(
                    f"fbar standard error {se:.3g} exceeds {self.hmm.warn_fraction:.0%} "
                    f"of the drift magnitude {scale:.3g}; increase the hmm horizon "
                    "or replicas", RuntimeWarning)
                self.fbar_warned = True
        if self.fbar_cache is not None:
            se_val = float(per_rep.std(axis=0, ddof=1).mean() / math.sqrt(M)) if M >= 2 else 0.0
            for p in range(N):
                self.fbar_cache.append((float(self.X[p, 0]), float(mu.mean[0]),
                                        mu.second_moment, float(self._fbar[p, 0]), se_val))

    def advance(self, n_sub: int, xs=None):
        """Advance n_sub micro steps; a coupled driver may hand in the slow
        noise block (common random numbers with the full system)."""
        m = self.model
        N = self.X.shape[0]
        if xs is None:
            xs = self.noise.gaussians(self.slow_kind, self.k, n_sub, N, m.n_slow_modes)
        with np.errstate(over="ignore", invalid="ignore"):
            for j in range(n_sub):
                mu = empirical_view(m, self.X)
                if self.mode == "exact":
                    fbar = m.exact_fbar(self.X, mu)
                    if self.fbar_cache is not None and self.k % max(1, self.n_steps // 200) == 0:
                        for p in range(N):
                            self.fbar_cache.append((float(self.X[p, 0]), float(mu.mean[0]),
                                                    mu.second_moment, float(fbar[p, 0]), 0.0))
                else:
                    if self.k % self.hmm.refresh_stride_steps == 0 or self._fbar is None:
                        self._refresh_fbar()
                    fbar = self._fbar
                drift = m.a1(self.X, mu) + fbar
                if m.tame_slow:
                    drift = _tame(m, drift, self.h)
                self.X = self.X + self.h * drift + self.sqrt_h * m.b1_apply(self.X, mu, xs[j])
                self.k += 1
                t = self.k * self.h
                if self.recorder is not None:
                    self.recorder.maybe_record(self.k, t, self.X, self.X[:, :0],
                                               last=self.k == self.n_steps)
        _check_finite(self.X, self.X, self.k * self.h, self.context or "averaged run")

    def run(self, chunk: int = 64):
        while self.k < self.n_steps:
            self.advance(min(chunk, self.n_steps - self.k))
        return self


def simulate_averaged(model: ModelSpec, x0, n_particles: int,
                      params: MultiscaleParams, noise: noise_mod.NoisePlan,
                      mode: str = "exact", hmm: Optional[HmmConfig] = None,
                      recorder: Optional[TrajectoryRecorder] = None,
                      collect_fbar_cache: bool = False) -> TrajectoryRecorder:
    """Integrate the averaged equation to t_end; returns the recorder."""
    if recorder is None:
        recorder = TrajectoryRecorder(stride_steps=max(1, params.n_steps // 200))
    runner = AveragedRunner(model, x0, n_particles, params, noise, mode=mode,
                            hmm=hmm, recorder=recorder,
                            collect_fbar_cache=collect_fbar_cache)
    runner.run()
    recorder.final_ensemble = ParticleEnsemble(
        slow=runner.X.copy(), fast=np.zeros((runner.X.shape[0], 0)),
        time=runner.k * runner.h, step=runner.k, model_id=model.model_id)
    recorder.fbar_cache = runner.fbar_cache
    return recorder


def write_fbar_cache(rows, path):
    """CSV dump of fbar evaluations: x,mu_mean,mu_m2,fbar,std_error."""
    with open(path, "w") as fh:
        fh.write("x,mu_mean,mu_m2,fbar,std_error\n")
        for row in rows or []:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

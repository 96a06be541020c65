"""Coefficient bundles for two-time-scale mean-field systems.

A :class:`ModelSpec` packages the five coefficient maps of a slow-fast system

    dX = [a1(X, mu) + f(X, mu, Y)] dt          + b1(X, mu) dW1
    dY = (1/eps) a2(X, mu, Y) dt               + (1/sqrt(eps)) b2(X, mu, Y) dW2

where mu is the law of the slow component, represented throughout by the
moments (mean, mu(||.||^2)) of the N-particle empirical measure.  Coefficient
callables are vectorised over stacked particle rows and must stay pure: the
integrator invokes them concurrently across particle blocks.

The registry exposes four concrete systems ("linear-benchmark",
"mvsde-cubic", "porous-media-1d", "plaplace-1d") plus one deliberately
anti-dissipative model used to exercise the probe machinery.  Each model
declares the structural constants (dissipativity rate, Lipschitz constants)
that its randomized hypothesis probes certify numerically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import spatial
from .measure import MeasureMoments, SampleSet, w2_1d, w2_coupling_bound
from .spatial import Grid1D


@dataclass(frozen=True)
class FastLinearPart:
    """Declared linear part of the fast drift, flagged for stiff treatment.

    kind "scalar": drift contains -rate * v, integrated by the exact
    exponential factor.  kind "laplacian": drift contains the Dirichlet
    Laplacian on the model grid, integrated semi-implicitly.
    """

    kind: str
    rate: float = 0.0
    treatment: str = "exact"


@dataclass
class ModelSpec:
    model_id: str
    slow_dim: int
    fast_dim: int
    n_slow_modes: int
    n_fast_modes: int
    a1: Callable
    f: Callable
    a2_remainder: Callable
    b1_apply: Callable
    b2_apply: Callable
    b1_coeff: Callable
    b2_coeff: Callable
    constants: dict
    norm_slow: str
    norm_fast: str
    default_x0: np.ndarray
    default_y0: np.ndarray
    probe_fns: dict = field(default_factory=dict)
    fast_linear: Optional[FastLinearPart] = None
    a2_split: Optional[tuple] = None   # (v_coeff, forcing(U, mu)) when the
                                       # remainder is v_coeff*V + forcing
    grid: Optional[Grid1D] = None
    exact_fbar: Optional[Callable] = None
    v1_norm_alpha: Optional[Callable] = None
    tame_slow: bool = False
    h_max: Optional[float] = None
    measure_dependent: bool = True

    def fast_linear_apply(self, V):
        if self.fast_linear is None:
            return np.zeros_like(V)
        if self.fast_linear.kind == "scalar":
            return -self.fast_linear.rate * V
        return spatial.laplacian_apply(self.grid, V)

    def a2(self, U, mu, V):
        """Full fast drift (declared linear part plus remainder)."""
        return self.fast_linear_apply(V) + self.a2_remainder(U, mu, V)


# ---------------------------------------------------------------------------
# norms, inner products, empirical views
# ---------------------------------------------------------------------------

def _norm_sq(tag, grid, states):
    states = np.asarray(states, dtype=float)
    if tag == "euclidean":
        return np.sum(states * states, axis=-1)
    if tag == "l2":
        return spatial.l2_norm_sq(grid, states)
    if tag == "hminus1":
        return spatial.hminus1_norm_sq(grid, states)
    raise ValueError(f"unknown norm tag {tag!r}")


def _inner(tag, grid, a, b):
    if tag == "euclidean":
        return np.sum(a * b, axis=-1)
    if tag == "l2":
        return grid.dx * np.sum(a * b, axis=-1)
    if tag == "hminus1":
        return spatial.hminus1_inner(grid, a, b)
    raise ValueError(f"unknown norm tag {tag!r}")


def slow_norm_sq(model: ModelSpec, U):
    return _norm_sq(model.norm_slow, model.grid, U)


def fast_norm_sq(model: ModelSpec, V):
    return _norm_sq(model.norm_fast, model.grid, V)


def slow_inner(model: ModelSpec, a, b):
    return _inner(model.norm_slow, model.grid, a, b)


def fast_inner(model: ModelSpec, a, b):
    return _inner(model.norm_fast, model.grid, a, b)


def empirical_view(model: ModelSpec, U) -> MeasureMoments:
    """Moments of the slow-particle cloud under the model's state norm."""
    U = np.asarray(U, dtype=float)
    return MeasureMoments(mean=U.mean(axis=0),
                          second_moment=float(np.mean(slow_norm_sq(model, U))))


def _hs_sq(tag, grid, coeff):
    """Squared Hilbert-Schmidt norm of a diffusion coefficient.

    ``coeff`` is (d, m) or (N, d, m); columns are measured in the state norm.
    Returns a scalar or (N,) array.
    """
    coeff = np.asarray(coeff, dtype=float)
    cols_sq = _norm_sq(tag, grid, np.moveaxis(coeff, -1, -2))
    return np.sum(cols_sq, axis=-1)


# ---------------------------------------------------------------------------
# hypothesis probes
# ---------------------------------------------------------------------------

PROBE_PROPERTIES = (
    "monotonicity_slow",
    "strict_monotonicity_fast",
    "lipschitz_f",
    "lipschitz_b1",
    "lipschitz_b2",
    "coercivity_slow",
    "coercivity_fast",
)


@dataclass(frozen=True)
class ProbeSampler:
    """Ranges for randomized inequality probes."""

    state_scale: float = 1.5
    fast_scale: float = 1.5
    measure_samples: int = 8
    measure_scale: float = 1.0


@dataclass
class HypothesisReport:
    property: str
    samples: int
    worst_margin: float
    tolerance: float
    violating_witness: Optional[dict] = None

    @property
    def passed(self) -> bool:
        return self.worst_margin >= -self.tolerance


def _sample_measure_pair(model, sampler, rng):
    d = model.slow_dim
    k = sampler.measure_samples
    pts1 = sampler.measure_scale * rng.standard_normal((k, d))
    pts2 = sampler.measure_scale * rng.standard_normal((k, d))
    mu1 = empirical_view(model, pts1)
    mu2 = empirical_view(model, pts2)
    if d == 1:
        w2 = w2_1d(SampleSet(pts1), SampleSet(pts2))
    else:
        # exact transport not needed: an upper bound only weakens the check
        w2 = w2_coupling_bound(SampleSet(pts1), SampleSet(pts2))
    return mu1, mu2, w2


def probe_hypothesis(model: ModelSpec, property_name: str, n_samples: int = 1000,
                     sampler: ProbeSampler | None = None, seed: int = 0,
                     tolerance: float = 1e-10) -> HypothesisReport:
    """Randomized slack certificate for one structural inequality.

    Draws tuples (u1, u2, mu1, mu2, v1, v2), evaluates the model's slack for
    the requested property (slack >= 0 means the inequality holds with the
    declared constants) and reports the worst margin with a witness if it
    dips below -tolerance.  Deterministic given the seed.
    """
    if property_name not in model.probe_fns:
        raise ValueError(
            f"model {model.model_id!r} declares no probe for {property_name!r}; "
            f"available: {sorted(model.probe_fns)}")
    sampler = sampler or ProbeSampler()
    rng = np.random.default_rng(seed)
    fn = model.probe_fns[property_name]

    n_chunks = max(1, min(32, n_samples))
    sizes = [n_samples // n_chunks + (1 if i < n_samples % n_chunks else 0)
             for i in range(n_chunks)]
    worst = np.inf
    witness = None
    total = 0
    for size in sizes:
        if size == 0:
            continue
        mu1, mu2, w2 = _sample_measure_pair(model, sampler, rng)
        u1 = sampler.state_scale * rng.standard_normal((size, model.slow_dim))
        u2 = sampler.state_scale * rng.standard_normal((size, model.slow_dim))
        v1 = sampler.fast_scale * rng.standard_normal((size, model.fast_dim))
        v2 = sampler.fast_scale * rng.standard_normal((size, model.fast_dim))
        slack = np.asarray(fn(u1, u2, v1, v2, mu1, mu2, w2), dtype=float)
        i = int(np.argmin(slack))
        if slack[i] < worst:
            worst = float(slack[i])
            witness = {
                "u1": u1[i].copy(), "u2": u2[i].copy(),
                "v1": v1[i].copy(), "v2": v2[i].copy(),
                "mu1_mean": mu1.mean.copy(), "mu2_mean": mu2.mean.copy(),
                "mu1_m2": mu1.second_moment, "mu2_m2": mu2.second_moment,
                "w2": w2, "slack": worst,
            }
        total += size
    return HypothesisReport(
        property=property_name, samples=total, worst_margin=worst,
        tolerance=tolerance,
        violating_witness=witness if worst < -tolerance else None)


def run_probe_suite(model: ModelSpec, n_samples: int = 1000, seed: int = 0,
                    sampler: ProbeSampler | None = None,
                    tolerance: float = 1e-10) -> list[HypothesisReport]:
    """Run every probe the model declares."""
    return [probe_hypothesis(model, p, n_samples=n_samples, seed=seed + j,
                             sampler=sampler, tolerance=tolerance)
            for j, p in enumerate(model.probe_fns)]


# ---------------------------------------------------------------------------
# model builders
# ---------------------------------------------------------------------------

def make_linear_benchmark(a11: float = -1.0, a12: float = 0.25, f0: float = 1.0,
                          sigma1: float = 0.3, gamma: float = 2.0, k1: float = 1.0,
                          k2: float = 0.25, sigma2: float = 0.5) -> ModelSpec:
    """Scalar slow-fast system with every averaging quantity in closed form.

        dX = (a11 X + a12 m(mu) + f0 Y) dt + sigma1 dW1
        dY = (1/eps)(-gamma Y + k1 X + k2 m(mu)) dt + sigma2/sqrt(eps) dW2

    The frozen fast dynamics is Ornstein-Uhlenbeck: its invariant law is
    Gaussian with mean (k1 x + k2 m)/gamma and variance sigma2^2/(2 gamma),
    so the averaged coupling drift is f0 (k1 x + k2 m)/gamma exactly.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive (fast dynamics must dissipate)")

    def a1(U, mu):
        return a11 * U + a12 * mu.mean

    def f(U, mu, V):
        return f0 * V

    def a2_forcing(U, mu):
        return k1 * U + k2 * mu.mean

    def a2_rem(U, mu, V):
        return a2_forcing(U, mu)

    b1c = np.array([[sigma1]])
    b2c = np.array([[sigma2]])

    def exact_fbar(U, mu):
        return (f0 / gamma) * (k1 * U + k2 * mu.mean)

    theta_slow = -2.0 * a11 - abs(a12)
    constants = {
        "kappa": gamma, "l_b2": 0.0, "lam": gamma, "lip_f": abs(f0),
        "alpha": 2.0, "beta": 2.0,
        "c_mono_slow": max(a11, 0.0) + abs(a12),
        "theta_slow": theta_slow,
        "c_coer_slow": abs(a12) + sigma1 ** 2 + 1.0,
        "c_coer_fast": 2.0 * (k1 ** 2 + k2 ** 2) / gamma + sigma2 ** 2 + 1.0,
        "a11": a11, "a12": a12, "f0": f0, "sigma1": sigma1,
        "gamma": gamma, "k1": k1, "k2": k2, "sigma2": sigma2,
    }
    m = ModelSpec(
        model_id="linear-benchmark", slow_dim=1, fast_dim=1,
        n_slow_modes=1, n_fast_modes=1,
        a1=a1, f=f, a2_remainder=a2_rem,
        b1_apply=lambda U, mu, xi: sigma1 * xi,
        b2_apply=lambda U, mu, V, xi: sigma2 * xi,
        b1_coeff=lambda U, mu: b1c,
        b2_coeff=lambda U, mu, V: b2c,
        constants=constants, norm_slow="euclidean", norm_fast="euclidean",
        default_x0=np.array([1.0]), default_y0=np.array([1.0]),
        fast_linear=FastLinearPart("scalar", rate=gamma, treatment="exact"),
        a2_split=(0.0, a2_forcing),
        exact_fbar=exact_fbar,
        v1_norm_alpha=lambda U: np.sum(U * U, axis=-1),
        measure_dependent=not (a12 == 0.0 and k2 == 0.0),
    )

    def lip_f_bound(du, dv, w2, mu1, mu2):
        return abs(f0) * dv

    m.probe_fns = _standard_probe_fns(m, lip_f_bound)
    return m


def make_mvsde_cubic(kappa: float = 1.0, k1: float = 0.5, c_sin: float = 0.5,
                     c_mu: float = 0.25, f0: float = 1.0, sigma1: float = 0.3,
                     sigma_c: float = 0.4, l_sigma2: float = 0.1) -> ModelSpec:
    """Scalar mean-field system with strictly monotone cubic fast drift.

        dX = (c_sin sin X + c_mu m(mu) + f0 Y) dt + sigma1 dW1
        dY = (1/eps)(-kappa Y - Y^3 + k1 X) dt
             + (sigma_c + l_sigma2 tanh Y)/sqrt(eps) dW2

    The cubic term only strengthens the fast dissipativity, so the strict
    monotonicity constant is kappa itself; the diffusion is Lipschitz in y
    with constant l_sigma2.  The averaged drift has no closed form and is
    estimated ergodically.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if kappa <= 2.0 * l_sigma2 ** 2:
        raise ValueError("averaging applicability needs kappa > 2 * l_sigma2^2")
    if sigma_c <= abs(l_sigma2):
        raise ValueError("need sigma_c > |l_sigma2| for nondegenerate fast noise")

    def a1(U, mu):
        return c_sin * np.sin(U) + c_mu * mu.mean

    def f(U, mu, V):
        return f0 * V

    def a2_rem(U, mu, V):
        return -V ** 3 + k1 * U

    def sig2(V):
        return sigma_c + l_sigma2 * np.tanh(V)

    b1c = np.array([[sigma1]])
    constants = {
        "kappa": kappa, "l_b2": abs(l_sigma2), "lam": kappa, "lip_f": abs(f0),
        "alpha": 2.0, "beta": 2.0,
        "c_mono_slow": c_sin + c_mu,
        "theta_slow": 1.0,
        "c_coer_slow": 1.0 + c_sin + c_mu + sigma1 ** 2,
        "c_coer_fast": k1 ** 2 / kappa + (sigma_c + abs(l_sigma2)) ** 2 + 1.0,
        "k1": k1, "c_sin": c_sin, "c_mu": c_mu, "f0": f0,
        "sigma1": sigma1, "sigma_c": sigma_c, "l_sigma2": l_sigma2,
    }
    m = ModelSpec(
        model_id="mvsde-cubic", slow_dim=1, fast_dim=1,
        n_slow_modes=1, n_fast_modes=1,
        a1=a1, f=f, a2_remainder=a2_rem,
        b1_apply=lambda U, mu, xi: sigma1 * xi,
        b2_apply=lambda U, mu, V, xi: sig2(V) * xi,
        b1_coeff=lambda U, mu: b1c,
        b2_coeff=lambda U, mu, V: sig2(V)[..., None],
        constants=constants, norm_slow="euclidean", norm_fast="euclidean",
        default_x0=np.array([1.0]), default_y0=np.array([0.5]),
        fast_linear=FastLinearPart("scalar", rate=kappa, treatment="exact"),
        exact_fbar=None,
        v1_norm_alpha=lambda U: np.sum(U * U, axis=-1),
        measure_dependent=c_mu != 0.0,
    )

    def lip_f_bound(du, dv, w2, mu1, mu2):
        return abs(f0) * dv

    m.probe_fns = _standard_probe_fns(m, lip_f_bound)
    return m


def _sine_noise(grid, n_modes, scale):
    basis = np.stack([spatial.sine_mode(grid, k) for k in range(1, n_modes + 1)])
    coeff = scale * basis.T  # (d, m)

    def apply(xi):
        return xi @ (scale * basis)

    return coeff, apply


def _pde_fast_block(grid, c_g, c_u, c_mu_g, sigma2, n_fast_modes):
    b2c, b2_do = _sine_noise(grid, n_fast_modes, sigma2)

    def a2_rem(U, mu, V):
        return -c_g * V + c_u * np.tanh(U) + c_mu_g * mu.mean

    def forcing(U, mu):
        return c_u * np.tanh(U) + c_mu_g * mu.mean

    return a2_rem, forcing, b2c, b2_do


def make_porous_media_1d(r: float = 4.0, n_interior: int = 63, c_psi: float = 1.0,
                         c_f: float = 0.5, c_m: float = 0.2, sigma1: float = 0.05,
                         c_g: float = 0.5, c_u: float = 0.5, c_mu_g: float = 0.25,
                         sigma2: float = 0.2, n_slow_modes: int = 4,
                         n_fast_modes: int = 4, x0_amplitude: float = 0.4) -> ModelSpec:
    """Degenerate-diffusion slow field coupled to a stiff linear fast field.

    Slow drift: c_psi * laplacian(psi(u)) with psi(u) = |u|^(r-2) u applied
    pointwise (monotone, not Lipschitz; integrated explicitly with taming).
    Fast drift: laplacian(v) - c_g v + c_u tanh(u) + c_mu_g m(mu), handled
    semi-implicitly on the Laplacian.  Slow-state errors are measured in the
    discrete H^-1 norm, fast-state errors in L^2.

    The fast equation is linear in v with constant mode noise, so the frozen
    invariant mean solves (c_g - laplacian) mean = forcing and the averaged
    coupling drift is available in closed form.
    """
    if r < 2:
        raise ValueError("porous medium exponent requires r >= 2")
    grid = Grid1D(n_interior)
    lam1 = spatial.lambda1(grid)
    if lam1 - c_g <= 0.0:
        raise ValueError("eigenvalue gap condition needs c_g < lambda1 of the grid")

    def psi(u):
        return np.abs(u) ** (r - 2.0) * u

    def a1(U, mu):
        return c_psi * spatial.laplacian_apply(grid, psi(U))

    def f(U, mu, V):
        return c_f * V + c_m * mu.second_moment * np.tanh(U)

    a2_rem, forcing, b2c, b2_do = _pde_fast_block(grid, c_g, c_u, c_mu_g, sigma2, n_fast_modes)
    b1c, b1_do = _sine_noise(grid, n_slow_modes, sigma1)

    def exact_fbar(U, mu):
        mean_v = spatial.solve_shifted_neg_laplacian(grid, c_g, forcing(U, mu))
        return c_f * mean_v + c_m * mu.second_moment * np.tanh(U)

    eigs = (2.0 / grid.dx ** 2) * (1.0 - np.cos(np.arange(1, n_slow_modes + 1) * np.pi * grid.dx))
    hs_b1 = sigma1 ** 2 * float(np.sum(1.0 / eigs))   # columns measured in H^-1
    hs_b2 = sigma2 ** 2 * n_fast_modes                # columns measured in L^2
    kappa = lam1 + c_g
    constants = {
        "kappa": kappa, "l_b2": 0.0, "l_g": c_g, "lam": kappa,
        "lip_f": (c_f + 2.0 * c_m) / math.sqrt(lam1),
        "alpha": r, "beta": 2.0, "r": r,
        "c_mono_slow": 0.0,
        "theta_slow": 2.0 * c_psi,
        "c_coer_slow": hs_b1 + 1.0,
        "c_coer_fast": (c_u ** 2 + c_mu_g ** 2) / kappa * 4.0 + hs_b2 + 1.0,
        "c_psi": c_psi, "c_f": c_f, "c_m": c_m, "sigma1": sigma1,
        "c_g": c_g, "c_u": c_u, "c_mu_g": c_mu_g, "sigma2": sigma2,
    }
    x0 = x0_amplitude * np.sin(np.pi * grid.nodes)
    m = ModelSpec(
        model_id="porous-media-1d", slow_dim=n_interior, fast_dim=n_interior,
        n_slow_modes=n_slow_modes, n_fast_modes=n_fast_modes,
        a1=a1, f=f, a2_remainder=a2_rem,
        b1_apply=lambda U, mu, xi: b1_do(xi),
        b2_apply=lambda U, mu, V, xi: b2_do(xi),
        b1_coeff=lambda U, mu: b1c,
        b2_coeff=lambda U, mu, V: b2c,
        constants=constants, norm_slow="hminus1", norm_fast="l2",
        default_x0=x0, default_y0=np.zeros(n_interior),
        fast_linear=FastLinearPart("laplacian", treatment="semi_implicit"),
        a2_split=(-c_g, forcing),
        grid=grid, exact_fbar=exact_fbar,
        v1_norm_alpha=lambda U: grid.dx * np.sum(np.abs(U) ** r, axis=-1),
        tame_slow=True,
        # explicit stability margin for the tamed degenerate diffusion,
        # sized to roughly twice the initial amplitude
        h_max=grid.dx ** 2 / (2.0 * c_psi * (r - 1.0)
                              * max(2.0 * x0_amplitude, 0.25) ** (r - 2.0)),
    )

    def lip_f_bound(du_l2, dv, w2, mu1, mu2):
        # pointwise tanh coupling: use the L2 modulus for the slow argument
        big_m2 = max(mu1.second_moment, mu2.second_moment)
        return (c_f * dv + c_m * big_m2 * du_l2) / math.sqrt(lam1)

    m.probe_fns = _standard_probe_fns(m, lip_f_bound, lip_f_du_norm="l2")
    return m


def make_plaplace_1d(p: float = 4.0, n_interior: int = 63, c_p: float = 0.3,
                     c_f: float = 0.5, c_m: float = 0.2, sigma1: float = 0.05,
                     c_g: float = 0.5, c_u: float = 0.5, c_mu_g: float = 0.25,
                     sigma2: float = 0.2, n_slow_modes: int = 4,
                     n_fast_modes: int = 4, x0_amplitude: float = 0.3) -> ModelSpec:
    """Gradient-nonlinearity slow field; reduces to the heat drift at p = 2.

    Slow drift: c_p * d/dx(|du/dx|^(p-2) du/dx) via forward differences with
    Dirichlet ghosts.  Fast block identical to the porous-media model.  Slow
    errors are measured in discrete L^2 (the pivot space for this example).
    """
    if p < 2:
        raise ValueError("p-Laplace exponent requires p >= 2")
    grid = Grid1D(n_interior)
    dx = grid.dx
    lam1 = spatial.lambda1(grid)
    if lam1 - c_g <= 0.0:
        raise ValueError("eigenvalue gap condition needs c_g < lambda1 of the grid")

    def grad(U):
        # forward differences including both Dirichlet ghost gaps: (..., n+1)
        low = np.concatenate([U[..., :1], np.diff(U, axis=-1), -U[..., -1:]], axis=-1)
        return low / dx

    def a1(U, mu):
        q = grad(U)
        phi = np.abs(q) ** (p - 2.0) * q
        return c_p * np.diff(phi, axis=-1) / dx

    def f(U, mu, V):
        return c_f * V + c_m * mu.second_moment * np.tanh(U)

    a2_rem, forcing, b2c, b2_do = _pde_fast_block(grid, c_g, c_u, c_mu_g, sigma2, n_fast_modes)
    b1c, b1_do = _sine_noise(grid, n_slow_modes, sigma1)

    def exact_fbar(U, mu):
        mean_v = spatial.solve_shifted_neg_laplacian(grid, c_g, forcing(U, mu))
        return c_f * mean_v + c_m * mu.second_moment * np.tanh(U)

    hs_b1 = sigma1 ** 2 * n_slow_modes
    hs_b2 = sigma2 ** 2 * n_fast_modes
    kappa = lam1 + c_g
    constants = {
        "kappa": kappa, "l_b2": 0.0, "l_g": c_g, "lam": kappa,
        "lip_f": c_f + 2.0 * c_m,
        "alpha": p, "beta": 2.0, "p": p,
        "c_mono_slow": 0.0,
        "theta_slow": 2.0 * c_p,
        "c_coer_slow": hs_b1 + 1.0,
        "c_coer_fast": (c_u ** 2 + c_mu_g ** 2) / kappa * 4.0 + hs_b2 + 1.0,
        "c_p": c_p, "c_f": c_f, "c_m": c_m, "sigma1": sigma1,
        "c_g": c_g, "c_u": c_u, "c_mu_g": c_mu_g, "sigma2": sigma2,
    }
    x0 = x0_amplitude * np.sin(np.pi * grid.nodes)
    m = ModelSpec(
        model_id="plaplace-1d", slow_dim=n_interior, fast_dim=n_interior,
        n_slow_modes=n_slow_modes, n_fast_modes=n_fast_modes,
        a1=a1, f=f, a2_remainder=a2_rem,
        b1_apply=lambda U, mu, xi: b1_do(xi),
        b2_apply=lambda U, mu, V, xi: b2_do(xi),
        b1_coeff=lambda U, mu: b1c,
        b2_coeff=lambda U, mu, V: b2c,
        constants=constants, norm_slow="l2", norm_fast="l2",
        default_x0=x0, default_y0=np.zeros(n_interior),
        fast_linear=FastLinearPart("laplacian", treatment="semi_implicit"),
        a2_split=(-c_g, forcing),
        grid=grid, exact_fbar=exact_fbar,
        v1_norm_alpha=lambda U: dx * np.sum(np.abs(grad(U)) ** p, axis=-1),
        tame_slow=True,
        h_max=grid.dx ** 2 / (4.0 * c_p * (p - 1.0) * 2.0 ** (p - 2.0)),
    )

    def lip_f_bound(du, dv, w2, mu1, mu2):
        big_m2 = max(mu1.second_moment, mu2.second_moment)
        return c_f * dv + c_m * big_m2 * du

    m.probe_fns = _standard_probe_fns(m, lip_f_bound)
    return m


def make_broken_antidissipative(sigma2: float = 0.3) -> ModelSpec:
    """Deliberately invalid model: the fast drift +y expands instead of
    contracting, while kappa = 1 is (falsely) declared.  Probe fodder."""

    def zero1(U, mu):
        return np.zeros_like(U)

    def zerof(U, mu, V):
        return np.zeros_like(U)

    def a2_rem(U, mu, V):
        return V

    b2c = np.array([[sigma2]])
    constants = {"kappa": 1.0, "l_b2": 0.0, "lam": 1.0, "lip_f": 0.0,
                 "alpha": 2.0, "beta": 2.0}
    m = ModelSpec(
        model_id="broken-antidissipative", slow_dim=1, fast_dim=1,
        n_slow_modes=1, n_fast_modes=1,
        a1=zero1, f=zerof, a2_remainder=a2_rem,
        b1_apply=lambda U, mu, xi: 0.0 * xi,
        b2_apply=lambda U, mu, V, xi: sigma2 * xi,
        b1_coeff=lambda U, mu: np.zeros((1, 1)),
        b2_coeff=lambda U, mu, V: b2c,
        constants=constants, norm_slow="euclidean", norm_fast="euclidean",
        default_x0=np.array([0.0]), default_y0=np.array([1.0]),
        fast_linear=None, exact_fbar=None,
        v1_norm_alpha=lambda U: np.sum(U * U, axis=-1),
        measure_dependent=False,
    )
    m.probe_fns = {
        "strict_monotonicity_fast": _strict_fast_slack(m),
    }
    return m


# ---------------------------------------------------------------------------
# probe slack closures
# ---------------------------------------------------------------------------

def _strict_fast_slack(m: ModelSpec):
    kappa = m.constants["kappa"]

    def slack(u1, u2, v1, v2, mu1, mu2, w2):
        dv = v1 - v2
        pair = fast_inner(m, m.a2(u1, mu1, v1) - m.a2(u1, mu1, v2), dv)
        return -pair - kappa * fast_norm_sq(m, dv)

    return slack


def _standard_probe_fns(m: ModelSpec, lip_f_bound, lip_f_du_norm: str | None = None):
    c = m.constants
    grid = m.grid

    def du_for_f(du_states):
        if lip_f_du_norm == "l2":
            return np.sqrt(spatial.l2_norm_sq(grid, du_states))
        return np.sqrt(slow_norm_sq(m, du_states))

    def mono_slow(u1, u2, v1, v2, mu1, mu2, w2):
        du = u1 - u2
        pair = slow_inner(m, m.a1(u1, mu1) - m.a1(u2, mu2), du)
        return c["c_mono_slow"] * (slow_norm_sq(m, du) + w2 ** 2) - pair

    def lip_f(u1, u2, v1, v2, mu1, mu2, w2):
        # same measure on both sides: certifies the state Lipschitz modulus
        df = m.f(u1, mu1, v1) - m.f(u2, mu1, v2)
        dv = np.sqrt(fast_norm_sq(m, v1 - v2))
        return lip_f_bound(du_for_f(u1 - u2), dv, w2, mu1, mu1) - np.sqrt(slow_norm_sq(m, df))

    def lip_b1(u1, u2, v1, v2, mu1, mu2, w2):
        db = np.asarray(m.b1_coeff(u1, mu1), dtype=float) - np.asarray(m.b1_coeff(u2, mu2), dtype=float)
        hs = _hs_sq(m.norm_slow, grid, db)
        du = np.sqrt(slow_norm_sq(m, u1 - u2))
        bound = c.get("lip_b1", 0.0) * (du + w2)
        return bound - np.sqrt(hs) * np.ones_like(du)

    def lip_b2(u1, u2, v1, v2, mu1, mu2, w2):
        db = np.asarray(m.b2_coeff(u1, mu1, v1), dtype=float) - np.asarray(m.b2_coeff(u1, mu1, v2), dtype=float)
        hs = _hs_sq(m.norm_fast, grid, db)
        dv = np.sqrt(fast_norm_sq(m, v1 - v2))
        return c["l_b2"] * dv - np.sqrt(hs) * np.ones_like(dv)

    def coer_slow(u1, u2, v1, v2, mu1, mu2, w2):
        pair = slow_inner(m, m.a1(u1, mu1), u1)
        hs = _hs_sq(m.norm_slow, grid, np.asarray(m.b1_coeff(u1, mu1), dtype=float))
        budget = c["c_coer_slow"] * (1.0 + slow_norm_sq(m, u1) + mu1.second_moment)
        return budget - c["theta_slow"] * m.v1_norm_alpha(u1) - 2.0 * pair - hs

    def coer_fast(u1, u2, v1, v2, mu1, mu2, w2):
        pair = fast_inner(m, m.a2(u1, mu1, v1), v1)
        hs = _hs_sq(m.norm_fast, grid, np.asarray(m.b2_coeff(u1, mu1, v1), dtype=float))
        budget = c["c_coer_fast"] * (1.0 + slow_norm_sq(m, u1) + mu1.second_moment)
        return budget - 2.0 * pair - hs - c["lam"] * fast_norm_sq(m, v1)

    return {
        "monotonicity_slow": mono_slow,
        "strict_monotonicity_fast": _strict_fast_slack(m),
        "lipschitz_f": lip_f,
        "lipschitz_b1": lip_b1,
        "lipschitz_b2": lip_b2,
        "coercivity_slow": coer_slow,
        "coercivity_fast": coer_fast,
    }


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

REGISTRY = {
    "linear-benchmark": make_linear_benchmark,
    "mvsde-cubic": make_mvsde_cubic,
    "porous-media-1d": make_porous_media_1d,
    "plaplace-1d": make_plaplace_1d,
    "broken-antidissipative": make_broken_antidissipative,
}


def build_model(model_id: str, params: dict | None = None) -> ModelSpec:
    """Instantiate a registered model with keyword overrides."""
    if model_id not in REGISTRY:
        raise KeyError(f"unknown model id {model_id!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[model_id](**(params or {}))

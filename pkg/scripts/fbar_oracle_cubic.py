"""Independent long-run oracle for the cubic model's averaged coupling drift.

Tabulates fbar(x, delta_0) for the mvsde-cubic frozen dynamics two ways that
share nothing with the package's integrator or RNG:

  1. a 10^7-step Euler-Maruyama time average using numpy's Philox generator,
  2. quadrature of the exact stationary density
         p(y) ~ (1/sigma^2(y)) exp( int_0^y 2 b(u) / sigma^2(u) du ).

The agreed value is frozen into tests/test_averaging.py.

Run:  python scripts/fbar_oracle_cubic.py
"""
import numpy as np
from scipy.integrate import quad

KAPPA, K1, SIGMA_C, L_SIG, F0 = 1.0, 0.5, 0.4, 0.1, 1.0
X_FROZEN = 1.0


def drift(y):
    return -KAPPA * y - y ** 3 + K1 * X_FROZEN


def sigma(y):
    return SIGMA_C + L_SIG * np.tanh(y)


def long_run(n_steps=10_000_000, h=0.005, burn=2000, seed=20240817, chains=8):
    rng = np.random.default_rng(np.random.Philox(seed))
    y = np.zeros(chains)
    acc = np.zeros(chains)
    count = 0
    sqrt_h = np.sqrt(h)
    per_chain = n_steps // chains
    for k in range(per_chain):
        y = y + h * drift(y) + sqrt_h * sigma(y) * rng.standard_normal(chains)
        if k >= burn:
            acc += y
            count += 1
    means = acc / count
    est = F0 * means.mean()
    se = F0 * means.std(ddof=1) / np.sqrt(chains)
    return est, se


def quadrature():
    def logw(y):
        val, _ = quad(lambda u: 2.0 * drift(u) / sigma(u) ** 2, 0.0, y, limit=200)
        return val

    ys = np.linspace(-4.0, 4.0, 4001)
    lw = np.array([logw(y) for y in ys])
    w = np.exp(lw - lw.max()) / sigma(ys) ** 2
    z = np.trapezoid(w, ys)
    return F0 * np.trapezoid(ys * w, ys) / z


if __name__ == "__main__":
    q = quadrature()
    print(f"quadrature fbar({X_FROZEN}, delta_0) = {q:.8f}")
    est, se = long_run()
    print(f"long-run EM (1e7 steps, h=0.005) = {est:.6f} +- {se:.6f}")
    print(f"difference = {est - q:+.6f}")

#!/usr/bin/env python3
"""Closed-form pilot for the temporal-order study design.

For a damped oscillatory mode dv = (i theta - sigma) v dt + dW driven by
the same Brownian path, the mean-square gap between the exact flow and the
midpoint-Cayley step has an exact covariance recursion.  Composing those
per-mode curves over a candidate spectrum predicts the fitted slope and r^2
of the dt ladder before spending any Monte Carlo time.

Usage: python scripts/temporal_order_pilot.py
"""

import numpy as np


def mode_error2(theta, sigma, dt, horizon):
    n = int(round(horizon / dt))
    rho = np.exp((1j * theta - sigma) * dt)
    r = np.exp(-sigma * dt) * (1 + 1j * theta * dt / 2) / (1 - 1j * theta * dt / 2)
    tau = 1 / (1 - 1j * theta * dt / 2)
    q_ee = (1 - np.exp(-2 * sigma * dt)) / (2 * sigma)
    q_ss = abs(tau) ** 2 * dt
    q_es = np.conj(tau) * (np.exp((1j * theta - sigma) * dt) - 1) / (1j * theta - sigma)
    cee = css = 0.0
    ces = 0.0 + 0.0j
    for _ in range(n):
        cee = abs(rho) ** 2 * cee + q_ee
        css = abs(r) ** 2 * css + q_ss
        ces = rho * np.conj(r) * ces + q_es
    return cee + css - 2 * np.real(ces)


def fitted_order(thetas, weights, sigma=1.0, horizon=1.0, k_range=(4, 5, 6, 7, 8)):
    dts = np.array([horizon * 2.0 ** (-k) for k in k_range])
    errs = np.sqrt([
        sum(w * mode_error2(t, sigma, dt, horizon) for t, w in zip(thetas, weights))
        for dt in dts
    ])
    x, y = np.log(dts), np.log(errs)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r2 = 1 - resid @ resid / np.sum((y - y.mean()) ** 2)
    return slope, r2, dts, errs


def main():
    # symbol magnitudes of the four retained modes on the 8^3 grid over the
    # box (0, 1/32) x (0, 1/8) x (0, 1/2); the m = 4 axis factors have zero
    # centered-difference symbol, which is what spreads the cluster ladder
    def sym(m, length):
        return abs(np.sin(2 * np.pi * m / 8)) * 8 / length

    lx, ly, lz = 1 / 32, 1 / 8, 1 / 2
    clusters = {
        "(4,4,1)": sym(1, lz),
        "(4,1,4)": sym(1, ly),
        "(4,2,2)": np.hypot(sym(2, ly), sym(2, lz)),
        "(1,4,2)": np.hypot(sym(1, lx), sym(2, lz)),
    }
    etas = np.array([0.971958, 0.017706, 0.005636, 0.004700])
    thetas = np.array(list(clusters.values()))
    slope, r2, dts, errs = fitted_order(thetas, etas)
    print("cluster symbols:", {k: round(v, 1) for k, v in clusters.items()})
    print("dts:   ", [f"{d:.5f}" for d in dts])
    print("errors:", [f"{e:.4e}" for e in errs])
    print(f"predicted slope {slope:.3f}, r2 {r2:.4f}")


if __name__ == "__main__":
    main()

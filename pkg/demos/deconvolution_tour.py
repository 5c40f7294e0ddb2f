#!/usr/bin/env python3
"""Solve a critical convolution equation and compare with its asymptotics.

Run:  python3 demos/deconvolution_tour.py
"""
import numpy as np

from gaussdeconv import (DeconvProblem, DiagonalCovariance, GaussianMixtureKernel,
                         check_assumptions, neumann_series_oracle, scan_report, solve)
from gaussdeconv.deconv import remainder_decay_check

# %% A critical, anisotropic pair in d = 5
S0 = [1.0, 1.0, 1.0, 1.0, 4.0]
J = GaussianMixtureKernel(5, [(1.25, DiagonalCovariance(S0)),
                              (-0.25, DiagonalCovariance([2 * s for s in S0]))])
g = GaussianMixtureKernel(5, [(0.7, DiagonalCovariance(S0)),
                              (0.3, DiagonalCovariance([3 * s for s in S0]))])
rj, rg = check_assumptions(J, g)
print(rj.summary())
print(rg.summary())

# %% H = g_hat(0) C + f along two axes
problem = DeconvProblem(J, g)
print(problem)
r = np.array([1.0, 2.0, 5.0, 10.0, 20.0])
for e in (np.eye(5)[0], np.eye(5)[4]):
    res = solve(problem, r[:, None] * e[None, :])
    print(f"direction {e.astype(int)}")
    for ri, c, f, h, err in zip(r, res.C_values, res.f_values, res.H_values, res.error):
        print(f"  r={ri:5.1f}  C={c:.6e}  f={f: .6e}  H={h:.6e}  err={err:.1e}")

# %% Cross-check with the closed-form Neumann series
x = np.array([[3.0, 0, 0, 0, 0], [0, 0, 0, 0, 6.0]])
oracle = neumann_series_oracle(J, g, x)
res = solve(problem, x)
print("Neumann oracle:", oracle.values, "+/-", oracle.errors)
print("solver:        ", res.H_values, "+/-", res.error)

# %% Normalised prefactors and the remainder
rep = scan_report(problem, [np.eye(5)[0], np.eye(5)[4], np.ones(5)], np.linspace(20, 40, 5))
print(rep.table())
fit = remainder_decay_check(problem, np.eye(5)[0], np.linspace(2, 12, 11))
print(f"remainder slope {fit.slope:.2f} (threshold {fit.threshold:.1f}), passed={fit.passed}")

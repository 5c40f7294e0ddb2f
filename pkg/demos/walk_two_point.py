#!/usr/bin/env python3
"""Gaussian walk two-point function and its power-law limit.

Run:  python3 demos/walk_two_point.py
"""
import numpy as np

from gaussdeconv import DiagonalCovariance, a_d, walk_c, walk_c_asymptotic
from gaussdeconv.gausswalk import walk_c_correction

# %% The series and its tail bound at the origin
sigma = DiagonalCovariance.identity(5)
value, bound = walk_c(sigma, np.zeros(5))
print(f"C(0) in d=5: {value:.12g}  (tail bound {bound:.1e})")

# %% Approach to a_d (x.Sigma^-1 x)^{-(d-2)/2} along an anisotropic ray
sigma = DiagonalCovariance([1.0, 1.0, 1.0, 1.0, 4.0])
r = np.geomspace(2, 40, 8)
for e in (np.eye(5)[0], np.eye(5)[4]):
    x = r[:, None] * e[None, :]
    c, _ = walk_c(sigma, x)
    ratio = c / walk_c_asymptotic(sigma, x)
    corr = walk_c_correction(sigma, x)
    print(f"direction {e.astype(int)}")
    for ri, q, k in zip(r, ratio, corr):
        print(f"  r={ri:6.2f}  C/asymptotic={q:.15f}  correction={k: .3e}")

print(f"a_5 = {a_d(5):.12g}")

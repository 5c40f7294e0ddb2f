"""Gaussian deconvolution of critical convolution equations.

Solves ``(delta - J) * G = g`` on R^d through the split
``G - g = g_hat(0) C + f`` with ``C`` the Gaussian walk two-point function,
checks the kernel hypotheses, compares solutions with the anisotropic
``(x . Sigma^-1 x)^{-(d-2)/2}`` asymptotics and runs a small Monte Carlo for
the self-repellent Brownian motion.
"""

__version__ = "0.1.0"

from .kernel import (DiagonalCovariance, GaussianMixtureKernel, Kernel,  # noqa: E402
                     RadialTabulatedKernel, convolve, moment)
from .gausswalk import (WalkTwoPoint, a_d, c_phi, step_density, walk_c,  # noqa: E402
                        walk_c_asymptotic, walk_c_recurrence_residual)
from .assumptions import (AssumptionReport, check_assumptions, criticalize,  # noqa: E402
                          estimate_infrared, interpolate_moment_exponent)
from .deconv import (DeconvProblem, DeconvResult, GridSpec, RadialSpec, derive_sigma,  # noqa: E402
                     e_hat, f_hat, neumann_series_oracle, remainder_decay_check, solve,
                     solve_direct_quadrature)
from .asymptotics import AsymptoticFit, fit_direction, scan_report  # noqa: E402

__all__ = [
    "DiagonalCovariance", "GaussianMixtureKernel", "Kernel", "RadialTabulatedKernel",
    "convolve", "moment", "WalkTwoPoint", "a_d", "c_phi", "step_density", "walk_c",
    "walk_c_asymptotic", "walk_c_recurrence_residual", "AssumptionReport",
    "check_assumptions", "criticalize", "estimate_infrared", "interpolate_moment_exponent",
    "DeconvProblem", "DeconvResult", "GridSpec", "RadialSpec", "derive_sigma", "e_hat",
    "f_hat", "neumann_series_oracle", "remainder_decay_check", "solve",
    "solve_direct_quadrature", "AsymptoticFit", "fit_direction", "scan_report",
]

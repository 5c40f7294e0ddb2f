"""Comparison of computed ``H`` and ``G`` with the anisotropic power-law asymptotics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .deconv import DeconvProblem, DeconvResult, solve
from .gausswalk import a_d
from .kernel import DiagonalCovariance

LOGGER = logging.getLogger(__name__)


def predicted_amplitude(g0, sigma: DiagonalCovariance):
    """``g_hat(0) a_d / sqrt(det Sigma)``."""
    return g0 * a_d(sigma.dim) / math.sqrt(sigma.det)


@dataclass
class AsymptoticFit:
    """Normalised prefactors ``(x.Sigma^-1 x)^{(d-2)/2} H(x)`` along one ray."""

    direction: np.ndarray
    radii: np.ndarray
    H: np.ndarray
    G: np.ndarray
    H_error: np.ndarray
    prefactors: np.ndarray
    prefactor_errors: np.ndarray
    predicted: float
    exponent: float
    exponent_G: float

    @property
    def deviations(self):
        return self.prefactors / self.predicted - 1.0

    @property
    def deviation(self):
        """Relative deviation from the prediction at the largest radius."""
        return float(self.deviations[-1])


def _locate(points, targets):
    idx = []
    for t in targets:
        dist = np.max(np.abs(points - t[None, :]), axis=1)
        j = int(np.argmin(dist))
        if dist[j] > 1e-9 * max(1.0, float(np.abs(t).max())):
            raise ValueError(f"result does not contain the point {t.tolist()}")
        idx.append(j)
    return np.array(idx)


def fit_direction(result: DeconvResult, sigma: DiagonalCovariance, direction, radii,
                  g0=None) -> AsymptoticFit:
    """Prefactors and fitted decay exponent of ``H`` along ``direction``.

    Parameters
    ----------
    result : DeconvResult
        Must contain the points ``r * direction / |direction|``.
    sigma : DiagonalCovariance
    direction : array_like
    radii : array_like
        At least four strictly increasing radii.
    g0 : float, optional
        ``g_hat(0)``; read from ``result.info`` when omitted.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size < 4:
        raise ValueError("fit_direction needs at least 4 radii")
    if np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly increasing")
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    if g0 is None:
        g0 = result.info["g0"]
    pts = radii[:, None] * e[None, :]
    idx = _locate(result.points, pts)
    H = result.H_values[idx]
    G = result.G_values[idx]
    err = result.error[idx]
    d = sigma.dim
    norm = sigma.quad_form(pts) ** ((d - 2) / 2)
    logr = np.log(radii)
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = float(np.polyfit(logr, np.log(np.abs(H)), 1)[0])
        expo_g = float(np.polyfit(logr, np.log(np.abs(G)), 1)[0])
    return AsymptoticFit(e, radii, H, G, err, norm * H, norm * err,
                         predicted_amplitude(g0, sigma), expo, expo_g)


@dataclass
class ScanReport:
    """Fits along several directions plus pass/fail against tolerances."""

    fits: list
    predicted: float
    amplitude_tol: float
    spread_tol: float
    dropped: dict = field(default_factory=dict)

    @property
    def spread(self):
        """Relative spread of the largest-radius prefactors across directions."""
        if not self.fits:
            return 0.0
        last = np.array([f.prefactors[-1] for f in self.fits])
        return float((last.max() - last.min()) / abs(last.mean()))

    @property
    def max_deviation(self):
        if not self.fits:
            return 0.0
        return float(max(abs(f.deviation) for f in self.fits))

    @property
    def passed(self):
        return self.spread <= self.spread_tol and self.max_deviation <= self.amplitude_tol

    def rows(self):
        """``(direction index, radius, prefactor, predicted)`` rows."""
        out = []
        for i, f in enumerate(self.fits):
            for r, p in zip(f.radii, f.prefactors):
                out.append((i, float(r), float(p), self.predicted))
        return out

    def table(self):
        lines = [f"predicted amplitude {self.predicted:.10g}",
                 f"{'dir':>4} {'exponent':>10} {'exp(G)':>10} {'prefactor(rmax)':>16} {'deviation':>11}"]
        for i, f in enumerate(self.fits):
            lines.append(f"{i:>4} {f.exponent:>10.5f} {f.exponent_G:>10.5f} "
                         f"{f.prefactors[-1]:>16.10g} {f.deviation:>11.3e}")
        lines.append(f"spread {self.spread:.3e} (tol {self.spread_tol:g}), "
                     f"max deviation {self.max_deviation:.3e} (tol {self.amplitude_tol:g}): "
                     f"{'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def scan_report(problem: DeconvProblem, directions, radii, amplitude_tol=0.02,
                spread_tol=0.02) -> ScanReport:
    """Solve along each direction and collect the fits.

    For the grid engine, radii beyond a third of the periodic half-cell are
    dropped (and listed in ``dropped``) since the comparison grid aliases
    them.
    """
    if problem.subcritical:
        raise ValueError("asymptotic scans need a critical problem")
    radii = np.asarray(radii, dtype=float)
    predicted = predicted_amplitude(problem.g0, problem.sigma)
    directions = [np.asarray(e, dtype=float) / np.linalg.norm(e) for e in directions]
    fits, dropped = [], {}
    if not directions:
        return ScanReport([], predicted, amplitude_tol, spread_tol)
    cap = None
    if problem.engine == "grid":
        from .deconv import _grid_axes
        m, K = _grid_axes(problem)
        cap = np.pi * m / (2 * K) / 3
    for i, e in enumerate(directions):
        r = radii
        if cap is not None:
            keep = np.all(np.abs(r[:, None] * e[None, :]) <= cap[None, :], axis=1)
            if not np.all(keep):
                dropped[i] = r[~keep].tolist()
            r = r[keep]
        res = solve(problem, r[:, None] * e[None, :])
        fits.append(fit_direction(res, problem.sigma, e, r, g0=problem.g0))
    return ScanReport(fits, predicted, amplitude_tol, spread_tol, dropped)

"""Solution of ``(delta - J) * G = g`` through the walk decomposition.

``H = G - g`` is split as ``H = g_hat(0) C + f`` where ``C`` is the Gaussian
walk two-point function (summed in :mod:`gausswalk`) and ``f`` is the inverse
Fourier transform of the milder remainder

    f_hat = E_hat / ((1 - D_hat)(1 - J_hat)),
    E_hat = g_hat J_hat (1 - D_hat) - g_hat(0) D_hat^2 (1 - J_hat).

Two engines compute ``f``.

* ``radial``: when every covariance in ``J`` and ``g`` is a multiple of one
  diagonal matrix ``S0`` the transform depends on ``k . S0 k`` only, and the
  d-dimensional inversion reduces to a one-dimensional Hankel transform in
  whitened coordinates.  Works in any dimension and at large ``|x|``.
* ``grid``: a uniform cosine sum over ``[-K, K]^d`` (folded onto one orthant,
  since every transform here is even in each coordinate) for general
  diagonal mixtures, ``d <= 5``.

Independent checks: :func:`solve_direct_quadrature` integrates ``H_hat``
itself on spherical shells in ``d = 3``, and :func:`neumann_series_oracle`
sums ``sum_n J^{*n} * g`` exactly when the covariances are integer multiples
of a common matrix.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, special

from .assumptions import criticalize
from .gausswalk import WalkTwoPoint, _prefactor, walk_series
from .kernel import (DiagonalCovariance, GaussianMixtureKernel, Kernel, RadialTabulatedKernel,
                     _as_points, _bessel_ratio)

LOGGER = logging.getLogger(__name__)

DEFAULT_M = {3: 256, 4: 96, 5: 32}
GRID_MAX_DIM = 5
# exp(-TAIL_EXPONENT) is the target size of every neglected Gaussian tail
TAIL_EXPONENT = 41.5
_EPS = np.finfo(float).eps


class DenominatorError(ArithmeticError):
    """``(1 - D_hat)(1 - J_hat)`` vanished away from the origin."""


class GridBudgetError(MemoryError):
    """The requested k-grid does not fit the memory budget."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform k-grid for the ``grid`` engine.

    Parameters
    ----------
    m : int, optional
        Points per axis (a multiple of 4).  Defaults by dimension.
    x_max : float or sequence, optional
        Half-period of the reconstructed ``f`` per axis.  When omitted the
        box half-width ``K`` is chosen from the Gaussian tail of ``E_hat``
        and ``x_max = pi m / (2 K)``.
    sub_cells : int, optional
        Sub-grid resolution per axis for the cell containing ``k = 0``.
    memory_budget : float
        Bytes allowed for the folded grid.
    """

    m: Optional[int] = None
    x_max: object = None
    sub_cells: Optional[int] = None
    memory_budget: float = 2.0e9


@dataclass(frozen=True)
class RadialSpec:
    """Gauss-Legendre panels for the ``radial`` engine."""

    order: int = 24
    max_panel: float = 0.5
    k_max: Optional[float] = None


def derive_sigma(J: Kernel) -> DiagonalCovariance:
    """``Sigma = diag(int x_i^2 J(x) dx)``; every entry must be positive."""
    m = np.asarray(J.second_moments(), dtype=float)
    if not np.all(np.isfinite(m)) or np.any(m <= 0):
        raise ValueError(f"second moments of J must be finite and positive, got {m.tolist()}")
    return DiagonalCovariance(m)


def _mixture_rows(h):
    if isinstance(h, GaussianMixtureKernel):
        return h.weights, h.variances
    return None


def elliptical_basis(J: Kernel, g: Kernel):
    """Common diagonal ``S0`` with every covariance a scalar multiple of it.

    Returns ``None`` when no such matrix exists.  Radial tabulated kernels
    force ``S0 = Id``.
    """
    d = J.dimension
    rows = []
    radial = False
    for h in (J, g):
        mix = _mixture_rows(h)
        if mix is None:
            if not (isinstance(h, RadialTabulatedKernel)):
                return None
            radial = True
        else:
            rows.extend(mix[1])
    ref = np.ones(d) if radial or not rows else rows[0]
    for r in rows:
        ratio = r / ref
        if not np.allclose(ratio, ratio[0], rtol=1e-12, atol=0):
            return None
    return DiagonalCovariance(ref)


def integer_scale_basis(J: Kernel, g: Kernel, max_denominator=12, max_degree=64):
    """Express both mixtures as polynomials in ``z = exp(-k.S0 k/2)``.

    Returns ``(S0, j_coef, g_coef)`` with ``coef[m]`` the weight of
    ``N(0, m S0)``, or ``None`` when the covariances are not integer
    multiples of a common matrix (up to ``max_degree``).
    """
    if not (isinstance(J, GaussianMixtureKernel) and isinstance(g, GaussianMixtureKernel)):
        return None
    base = elliptical_basis(J, g)
    if base is None:
        return None
    mult = [h.variances[:, 0] / base.diag[0] for h in (J, g)]
    cmin = min(float(m.min()) for m in mult)
    for den in range(1, max_denominator + 1):
        ints = [m * den / cmin for m in mult]
        rounded = [np.rint(v) for v in ints]
        if all(np.allclose(v, r, rtol=1e-10, atol=0) for v, r in zip(ints, rounded)):
            deg = int(max(r.max() for r in rounded))
            if deg > max_degree:
                return None
            coefs = []
            for h, r in zip((J, g), rounded):
                c = np.zeros(deg + 1)
                np.add.at(c, r.astype(int), h.weights)
                coefs.append(c)
            return base * (cmin / den), coefs[0], coefs[1]
    return None


class DeconvProblem:
    """A pair ``(J, g)`` together with engine settings.

    Parameters
    ----------
    J, g : Kernel
        Same dimension ``d >= 3``.  ``J`` must be critical within
        ``criticality_tol`` (it is rescaled to ``J_hat(0) = 1`` exactly)
        unless ``subcritical`` is set.
    grid : GridSpec, optional
    radial : RadialSpec, optional
    engine : {"auto", "radial", "grid"}
    series_rel_tol : float
        Passed to the walk series for ``C``.
    subcritical : bool
        Opt-in mode for ``J_hat(0) < 1``: ``H`` is inverted directly and
        ``C`` is identically zero.
    """

    def __init__(self, J: Kernel, g: Kernel, grid: GridSpec | None = None,
                 radial: RadialSpec | None = None, engine="auto", series_rel_tol=1e-12,
                 subcritical=False, criticality_tol=1e-6):
        if J.dimension != g.dimension:
            raise ValueError(f"J and g have dimensions {J.dimension} and {g.dimension}")
        if J.dimension < 3:
            raise ValueError("need d >= 3")
        self.d = J.dimension
        self.subcritical = bool(subcritical)
        j0 = J.mass()
        if self.subcritical:
            if not (0 < j0 < 1):
                raise ValueError(f"subcritical mode needs 0 < J_hat(0) < 1, got {j0:.12g}")
        else:
            if abs(j0 - 1.0) > criticality_tol:
                raise ValueError(
                    f"J is not critical: |J_hat(0) - 1| = {abs(j0 - 1):.3g} > {criticality_tol:g}")
            if j0 != 1.0:
                LOGGER.info("rescaling J by 1/%.17g to enforce J_hat(0) = 1", j0)
                J = criticalize(J)
        self.J = J
        self.g = g
        self.j0 = J.mass()
        self.g0 = g.mass()
        self.sigma = None if self.subcritical else derive_sigma(J)
        self.D = None if self.subcritical else GaussianMixtureKernel.gaussian(self.sigma)
        self.grid = grid or GridSpec()
        self.radial = radial or RadialSpec()
        self.series_rel_tol = series_rel_tol
        self.basis = elliptical_basis(J, g)
        if engine == "auto":
            engine = "radial" if self.basis is not None else "grid"
        if engine == "radial" and self.basis is None:
            raise ValueError("the radial engine needs covariances proportional to one matrix")
        if engine == "grid":
            if self.d > GRID_MAX_DIM:
                raise GridBudgetError(
                    f"grid engine limited to d <= {GRID_MAX_DIM}; d={self.d} needs the radial engine")
            if not (isinstance(J, GaussianMixtureKernel) and isinstance(g, GaussianMixtureKernel)):
                raise ValueError("the grid engine supports Gaussian mixture kernels only")
        elif engine != "radial":
            raise ValueError(f"unknown engine {engine!r}")
        self.engine = engine

    def __repr__(self):
        mode = "subcritical" if self.subcritical else "critical"
        return f"DeconvProblem(d={self.d}, {mode}, engine={self.engine}, J={self.J!r}, g={self.g!r})"

    # Fourier-side pieces, evaluated in one fixed operation order so that
    # J = g = D cancels bitwise.
    def _parts(self, k):
        gh = self.g.fourier(k)
        jh = self.J.fourier(k)
        dJ = (1.0 - self.j0) + self.J.fourier_deficit(k)
        if self.subcritical:
            return gh, jh, None, dJ, None
        dh = self.D.fourier(k)
        dD = self.D.fourier_deficit(k)
        return gh, jh, dh, dJ, dD


def _check_nonzero(k, d):
    k = _as_points(k, d)
    if np.any(np.all(k == 0, axis=-1)):
        raise ValueError("the transform is not evaluated at k = 0")
    return k


def e_hat(problem: DeconvProblem, k):
    """``E_hat = g_hat J_hat (1 - D_hat) - g_hat(0) D_hat^2 (1 - J_hat)``."""
    if problem.subcritical:
        raise ValueError("E_hat is only defined in critical mode")
    gh, jh, dh, dJ, dD = problem._parts(k)
    return (gh * jh) * dD - (problem.g0 * (dh * dh)) * dJ


def f_hat(problem: DeconvProblem, k):
    """``f_hat = E_hat / ((1 - D_hat)(1 - J_hat))`` for ``k != 0``.

    In subcritical mode this is ``H_hat`` itself.
    """
    k = _check_nonzero(k, problem.d)
    gh, jh, dh, dJ, dD = problem._parts(k)
    if np.any(dJ <= 0):
        bad = k[np.argmin(dJ)] if k.ndim > 1 else k
        raise DenominatorError(f"1 - J_hat(k) <= 0 at k = {np.round(bad, 6).tolist()}: "
                               "the infrared bound fails")
    if problem.subcritical:
        return (gh * jh) / dJ
    num = (gh * jh) * dD - (problem.g0 * (dh * dh)) * dJ
    return num / (dD * dJ)


def h_hat(problem: DeconvProblem, k):
    """``H_hat = J_hat g_hat / (1 - J_hat)``."""
    k = _check_nonzero(k, problem.d)
    gh, jh, _, dJ, _ = problem._parts(k)
    return (gh * jh) / dJ


def c_hat(problem: DeconvProblem, k):
    """``C_hat = D_hat^2 / (1 - D_hat)``."""
    k = _check_nonzero(k, problem.d)
    _, _, dh, _, dD = problem._parts(k)
    return (dh * dh) / dD


@dataclass
class DeconvResult:
    """Point values of ``C``, ``f``, ``H = g_hat(0) C + f`` and ``G = H + g``."""

    points: np.ndarray
    C_values: np.ndarray
    f_values: np.ndarray
    H_values: np.ndarray
    G_values: np.ndarray
    series_error: np.ndarray
    quadrature_error: np.ndarray
    truncation_error: np.ndarray
    engine: str
    converged: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def error(self):
        """Total per-point error estimate on ``H`` (and on ``G``)."""
        return self.series_error + self.quadrature_error + self.truncation_error

    @property
    def f_error(self):
        return self.quadrature_error + self.truncation_error

    def rows(self):
        """Rows ``x_1..x_d, C, f, H, G, err_est``."""
        return np.column_stack([self.points, self.C_values, self.f_values, self.H_values,
                                self.G_values, self.error])


# ----------------------------------------------------------------- tail bounds
def _numerator_terms(problem: DeconvProblem):
    """Gaussian envelopes ``|f_hat numerator| <= sum_t c_t prod_i exp(-a_ti k_i^2/2)``.

    Returns ``(coef, rates)`` with ``rates`` of shape ``(T, d)``, or ``None``
    for tabulated kernels.
    """
    J, g = problem.J, problem.g
    if not (isinstance(J, GaussianMixtureKernel) and isinstance(g, GaussianMixtureKernel)):
        return None
    coef, rates = [], []
    for wg, vg in zip(g.weights, g.variances):
        for wj, vj in zip(J.weights, J.variances):
            coef.append(abs(wg * wj))
            rates.append(vg + vj)
    if not problem.subcritical:
        coef.append(abs(problem.g0) * (1.0 + abs(1.0 - problem.j0) + J.abs_weight()))
        rates.append(2.0 * problem.sigma.diag)
    return np.array(coef), np.array(rates)


def _denominator_floor(problem: DeconvProblem, kmin_axes):
    """Lower bound of ``(1 - D_hat)(1 - J_hat)`` outside the box ``|k_i| <= K_i``."""
    J = problem.J
    w, v = J.weights, J.variances
    pos = w > 0
    decay = np.exp(-0.5 * v[pos] * kmin_axes ** 2).max(axis=1) if np.any(pos) else np.zeros(0)
    jmax = float(np.sum(w[pos] * decay))
    lo = 1.0 - jmax
    if not problem.subcritical:
        lo *= 1.0 - float(np.exp(-0.5 * problem.sigma.diag * kmin_axes ** 2).max())
    return lo


def _box_halfwidth(problem: DeconvProblem):
    terms = _numerator_terms(problem)
    amin = terms[1].min(axis=0)
    return np.sqrt(2.0 * TAIL_EXPONENT / amin)


def _box_truncation(problem: DeconvProblem, K):
    coef, rates = _numerator_terms(problem)
    floor = _denominator_floor(problem, K)
    if floor <= 0:
        return math.inf
    full = np.sqrt(2 * np.pi / rates)
    inside = full * special.erf(K * np.sqrt(rates / 2))
    mass_out = np.prod(full, axis=1) - np.prod(inside, axis=1)
    return float(np.sum(coef * np.maximum(mass_out, 0.0))) / floor / (2 * np.pi) ** problem.d


# --------------------------------------------------------------- radial engine
def _gl_panels(kmax, width, order):
    n_pan = max(1, int(math.ceil(kmax / width)))
    edges = np.linspace(0.0, kmax, n_pan + 1)
    t, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _radial_kmax(problem: DeconvProblem, s0):
    if problem.radial.k_max is not None:
        return float(problem.radial.k_max)
    terms = _numerator_terms(problem)
    if terms is None:
        return 40.0
    # whitened rates: a_t / S0 is the same on every axis
    a = terms[1][:, 0] / s0[0]
    return math.sqrt(2.0 * TAIL_EXPONENT / a.min())


def _radial_truncation(problem: DeconvProblem, s0, kmax, F_last):
    d = problem.d
    nu = d / 2 - 1
    pref = 1.0 / math.sqrt(np.prod(s0)) / (2 * np.pi) ** (d / 2) / (2 ** nu * math.gamma(nu + 1))
    terms = _numerator_terms(problem)
    if terms is None:
        # heuristic for tabulated kernels: last node magnitude over one unit
        return pref * abs(F_last) * kmax ** (d - 1) * kmax / d
    coef, rates = terms
    a = rates[:, 0] / s0[0]
    # denominator floor in whitened variables: exp(-c kmax^2/2) with c = v / s0
    J = problem.J
    w, c = J.weights, J.variances[:, 0] / s0[0]
    lo = 1.0 - float(np.sum(np.where(w > 0, w, 0.0) * np.exp(-0.5 * c * kmax ** 2)))
    if not problem.subcritical:
        sig = problem.sigma.diag[0] / s0[0]
        lo *= 1.0 - math.exp(-0.5 * sig * kmax ** 2)
    if lo <= 0:
        return math.inf
    s = d / 2
    tail = 0.5 * (2 / a) ** s * special.gamma(s) * special.gammaincc(s, 0.5 * a * kmax ** 2)
    return pref * float(np.sum(coef * tail)) / lo


def _radial_F(problem: DeconvProblem, s0, kappa):
    k = np.zeros((kappa.size, problem.d))
    k[:, 0] = kappa / math.sqrt(s0[0])
    return f_hat(problem, k)


def _radial_f(problem: DeconvProblem, points):
    d = problem.d
    s0 = problem.basis.diag
    nu = d / 2 - 1
    r = np.sqrt(np.sum(points * points / s0, axis=-1))
    kmax = _radial_kmax(problem, s0)
    settings = problem.radial
    width = min(settings.max_panel, math.pi / max(float(r.max()), 1e-300))
    pref = 1.0 / math.sqrt(np.prod(s0)) / (2 * np.pi) ** (d / 2) / (2 ** nu * math.gamma(nu + 1))

    def integrate_with(order):
        nodes, weights = _gl_panels(kmax, width, order)
        F = _radial_F(problem, s0, nodes)
        base = weights * F * nodes ** (d - 1)
        out = np.empty(r.size)
        mag = np.empty(r.size)
        for lo in range(0, r.size, 256):
            rr = r[lo:lo + 256]
            B = _bessel_ratio(nu, nodes[None, :] * rr[:, None])
            out[lo:lo + 256] = B @ base
            mag[lo:lo + 256] = np.abs(B) @ np.abs(base)
        return pref * out, pref * mag, F

    hi, mag, F = integrate_with(settings.order)
    lo_, _, _ = integrate_with(max(4, settings.order // 2))
    quad_err = np.abs(hi - lo_) + 64 * _EPS * mag
    trunc = _radial_truncation(problem, s0, kmax, F[-1])
    info = {"k_max": kmax, "panel_width": width, "order": settings.order, "S0": s0.tolist()}
    return hi, quad_err, np.full(r.size, trunc), np.ones(r.size, dtype=bool), info


# ----------------------------------------------------------------- grid engine
def _grid_axes(problem: DeconvProblem):
    d = problem.d
    settings = problem.grid
    m = settings.m or DEFAULT_M.get(d)
    if m is None or m % 4:
        raise ValueError(f"points per axis must be a positive multiple of 4, got {m}")
    if settings.x_max is None:
        K = _box_halfwidth(problem)
    else:
        xm = np.broadcast_to(np.asarray(settings.x_max, dtype=float), (d,))
        K = np.pi * m / (2 * xm)
    return m, K


def _orthant_fhat(problem: DeconvProblem, m, K):
    d = problem.d
    n = m // 2 + 1
    if n ** d * 8 * 3 > problem.grid.memory_budget:
        raise GridBudgetError(
            f"folded grid of {n}^{d} points exceeds the memory budget of "
            f"{problem.grid.memory_budget:.3g} bytes")
    dk = 2 * K / m
    axes = [np.arange(n) * dk[i] for i in range(d)]
    out = np.empty((n,) * d)
    tail = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, d - 1)
    for j in range(n):
        # one slab per first-axis index keeps the temporaries small
        k = np.empty((tail.shape[0], d))
        k[:, 0] = axes[0][j]
        k[:, 1:] = tail
        vals = np.empty(tail.shape[0])
        nz = np.any(k != 0, axis=1)
        vals[nz] = f_hat(problem, k[nz])
        vals[~nz] = np.nan
        out[j] = vals.reshape((n,) * (d - 1))
    return out, dk


def _origin_cell(problem: DeconvProblem, dk, sub):
    """Average of ``f_hat`` over the cell at 0, excluding a ball of radius min(dk)/10."""
    d = problem.d
    half = sub // 2
    pts = [(np.arange(half) + 0.5) * dk[i] / sub for i in range(d)]
    k = np.stack(np.meshgrid(*pts, indexing="ij"), axis=-1).reshape(-1, d)
    keep = np.sqrt(np.sum(k * k, axis=1)) >= dk.min() / 10
    return float(np.mean(f_hat(problem, k[keep])))


def _cos_sum(A, dk, x):
    """``prod(dk/2pi) sum_j W_j A_j prod_i cos(k_ji x_i)`` for each row of ``x``."""
    d = A.ndim
    n = A.shape[0]
    w = np.full(n, 2.0)
    w[0] = w[-1] = 1.0
    Aw = A
    for i in range(d):
        shape = [1] * d
        shape[i] = n
        Aw = Aw * w.reshape(shape)
    scale = float(np.prod(dk / (2 * np.pi)))
    idx = np.arange(n)
    out = np.empty(x.shape[0])
    mag = np.empty(x.shape[0])
    batch = max(1, int(4e6 // n ** (d - 1)))
    absA = np.abs(Aw)
    for lo in range(0, x.shape[0], batch):
        xb = x[lo:lo + batch]
        cos = [np.cos(np.outer(xb[:, i], idx * dk[i])) for i in range(d)]
        R = np.tensordot(cos[0], Aw, axes=(1, 0))
        Rm = np.tensordot(np.abs(cos[0]), absA, axes=(1, 0))
        for i in range(1, d):
            R = np.einsum("pj...,pj->p...", R, cos[i])
            Rm = np.einsum("pj...,pj->p...", Rm, np.abs(cos[i]))
        out[lo:lo + batch] = R
        mag[lo:lo + batch] = Rm
    return scale * out, scale * mag


def _grid_f(problem: DeconvProblem, points):
    d = problem.d
    m, K = _grid_axes(problem)
    x_max = np.pi * m / (2 * K)
    over = np.abs(points) > x_max
    if np.any(over):
        raise ValueError(f"points outside the periodic cell |x_i| <= {x_max.round(3).tolist()}")
    if np.any(np.abs(points) > x_max / 3):
        LOGGER.warning("points beyond x_max/3 = %s: the M/2 comparison grid aliases them",
                       (x_max / 3).round(3).tolist())
    A, dk = _orthant_fhat(problem, m, K)
    sub = problem.grid.sub_cells or (16 if d <= 3 else 8)
    A[(0,) * d] = _origin_cell(problem, dk, sub)
    f_m, mag = _cos_sum(A, dk, points)
    half = A[(slice(None, None, 2),) * d].copy()
    half[(0,) * d] = _origin_cell(problem, 2 * dk, sub)
    f_h, _ = _cos_sum(half, 2 * dk, points)
    diff = np.abs(f_m - f_h)
    quad_err = diff + 64 * _EPS * mag
    trunc = _box_truncation(problem, K)
    # the absolute floor is relative to the size of the whole cosine sum
    scale = float(np.prod(dk / (2 * np.pi))) * float(np.sum(np.abs(A)))
    converged = diff <= 0.5 * np.abs(f_m) + 1e-6 * scale + trunc
    if not np.all(converged):
        LOGGER.warning("M vs M/2 comparison did not settle at %d of %d points; error bars inflated",
                       int(np.sum(~converged)), converged.size)
    info = {"m": m, "k_max": K.tolist(), "x_max": x_max.tolist(), "sub_cells": sub}
    return f_m, quad_err, np.full(points.shape[0], trunc), converged, info


# ----------------------------------------------------------------------- solve
def solve(problem: DeconvProblem, points) -> DeconvResult:
    """Evaluate ``C``, ``f``, ``H`` and ``G`` at ``points``.

    Parameters
    ----------
    problem : DeconvProblem
    points : array_like, shape (n, d)

    Returns
    -------
    DeconvResult
    """
    x = np.array(_as_points(points, problem.d), dtype=float, ndmin=2)
    if problem.engine == "radial":
        f, qerr, terr, conv, info = _radial_f(problem, x)
    else:
        f, qerr, terr, conv, info = _grid_f(problem, x)
    if problem.subcritical:
        C = np.zeros(x.shape[0])
        serr = np.zeros(x.shape[0])
    else:
        C, cb, _ = WalkTwoPoint(problem.sigma, problem.series_rel_tol).evaluate(x)
        serr = abs(problem.g0) * cb
    H = problem.g0 * C + f
    G = H + problem.g.evaluate(x)
    info["engine"] = problem.engine
    info["g0"] = problem.g0
    return DeconvResult(x, C, f, H, G, serr, qerr, terr, problem.engine, conv, info)


# ------------------------------------------------------------ oracles: d = 3
def solve_direct_quadrature(problem: DeconvProblem, points, epsrel=1e-10, epsabs=1e-14,
                            angular=None):
    """Integrate ``H_hat e^{-ik.x}`` over spherical shells (``d = 3`` only).

    The shell integral uses a Gauss-Legendre product rule on one octant
    (``H_hat`` is even in each coordinate, which turns the exponential into
    a product of cosines) and adaptive Gauss-Kronrod in ``|k|``.

    Returns
    -------
    values, errors : ndarray
        ``errors`` adds the radial quadrature estimate and the difference
        between two angular resolutions.
    """
    if problem.d != 3:
        raise ValueError(f"direct quadrature is only provided for d = 3, got d = {problem.d}")
    x = np.array(_as_points(points, 3), dtype=float, ndmin=2)
    J, g = problem.J, problem.g
    if isinstance(J, GaussianMixtureKernel) and isinstance(g, GaussianMixtureKernel):
        amin = float((g.min_variances() + J.min_variances()).min())
        kmax = math.sqrt(2 * TAIL_EXPONENT / amin)
    else:
        kmax = 40.0
    rmax = float(np.sqrt(np.sum(x * x, axis=1)).max())
    n1 = angular or int(math.ceil(0.5 * kmax * rmax + 32))
    n2 = n1 + 16
    rules = []
    for n in (n1, n2):
        t, w = np.polynomial.legendre.leggauss(n)
        mu, wm = 0.5 * (t + 1), 0.5 * w
        ph, wp = 0.25 * np.pi * (t + 1), 0.25 * np.pi * w
        MU, PH = np.meshgrid(mu, ph, indexing="ij")
        st = np.sqrt(1 - MU ** 2)
        omega = np.stack([st * np.cos(PH), st * np.sin(PH), MU], axis=-1).reshape(-1, 3)
        rules.append((omega, np.outer(wm, wp).ravel()))
    npts = x.shape[0]
    norm = 8.0 / (2 * np.pi) ** 3

    def integrand(kap):
        out = np.empty(2 * npts)
        for i, (omega, wt) in enumerate(rules):
            k = kap * omega
            hk = h_hat(problem, k) * kap * kap * wt
            c = np.cos(k[:, None, 0] * x[None, :, 0]) * np.cos(k[:, None, 1] * x[None, :, 1]) \
                * np.cos(k[:, None, 2] * x[None, :, 2])
            out[i * npts:(i + 1) * npts] = norm * (hk @ c)
        return out

    brk = [p for p in (1e-3, 1e-2, 0.1, 1.0) if p < kmax]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad_vec(integrand, 0.0, kmax, epsabs=epsabs, epsrel=epsrel,
                                      points=brk, limit=20000)
    v1, v2 = val[:npts], val[npts:]
    errors = np.abs(v1 - v2) + err + 64 * _EPS * np.abs(v2)
    return v2, errors


# ---------------------------------------------------------- Neumann oracle
@dataclass
class OracleResult:
    values: np.ndarray
    errors: np.ndarray
    terms: int
    a_infinity: float
    rate: float


def neumann_series_oracle(J: Kernel, g: Kernel, points, tol=1e-17, max_terms=200000,
                          subcritical=False) -> OracleResult:
    """``H = sum_{n>=1} J^{*n} * g`` in closed form, regrouped by covariance scale.

    With every covariance an integer multiple ``m S0`` of a common diagonal
    matrix, ``J_hat`` and ``g_hat`` are polynomials in
    ``z = exp(-k.S0 k/2)`` and ``H_hat = sum_s A_s z^s`` with
    ``A = B + j * A`` (``B = j g``).  Each ``z^s`` is the Gaussian density
    ``N(0, s S0)``, so ``H(x) = sum_s A_s N(0, s S0)(x)``.  In the critical
    case ``A_s -> a_inf = g_hat(0) / J_hat'(1)`` geometrically and the
    limit part is summed as a walk series.  Grouping by scale instead of by
    ``n`` avoids the cancellation between large signed terms of ``J^{*n}``.
    """
    basis = integer_scale_basis(J, g)
    if basis is None:
        raise ValueError("the Neumann oracle needs Gaussian mixtures whose covariances are "
                         "integer multiples of one diagonal matrix")
    s0, jc, gc = basis
    if jc[0] != 0 or gc[0] != 0:
        raise ValueError("degenerate zero-covariance component")
    d = J.dimension
    x = np.array(_as_points(points, d), dtype=float, ndmin=2)
    jsum = float(np.sum(jc))
    poly = -jc.copy()
    poly[0] += 1.0  # 1 - J_hat(z), ascending powers
    roots = np.roots(poly[::-1]) if np.any(poly[1:]) else np.array([])
    if subcritical:
        other = roots
        a_inf = 0.0
    else:
        if abs(jsum - 1.0) > 1e-10:
            raise ValueError(f"J_hat(0) = {jsum:.15g} is not critical")
        near = np.abs(roots - 1.0) < 1e-6
        if near.sum() != 1:
            raise ValueError("z = 1 must be a simple root of 1 - J_hat(z)")
        other = roots[~near]
        slope = float(np.sum(np.arange(jc.size) * jc))
        a_inf = float(np.sum(gc)) / slope
    if other.size and np.abs(other).min() <= 1.0 + 1e-9:
        raise ValueError("1 - J_hat(z) has a root inside the closed unit disk; the regrouped "
                         "series does not converge")
    rate = 1.0 / float(np.abs(other).min()) if other.size else 0.0
    B = np.convolve(jc, gc)
    deg_j = jc.size - 1
    # deviations cannot settle below the rounding level of A_s itself
    settle = max(tol, 8 * _EPS) * max(1.0, abs(a_inf))
    A = [0.0]
    s = 0
    while True:
        s += 1
        val = B[s] if s < B.size else 0.0
        for mm in range(1, min(deg_j, s) + 1):
            val += jc[mm] * A[s - mm]
        A.append(val)
        if s >= B.size and s > deg_j:
            recent = np.abs(np.array(A[-deg_j:]) - a_inf)
            if recent.max() <= settle:
                break
        if s >= max_terms:
            raise ValueError("Neumann recursion did not settle within max_terms")
    A = np.array(A)
    S = s
    q = s0.quad_form(x)
    pre = _prefactor(s0)
    sv = np.arange(1, S + 1, dtype=float)
    dev = A[1:] - a_inf
    phi = pre * sv[None, :] ** (-d / 2) * np.exp(-q[:, None] / (2 * sv[None, :]))
    head = phi @ dev
    absum = np.abs(phi) @ np.abs(dev)
    # geometric remainder of (A_s - a_inf), with phi_s <= pre * s^{-d/2}
    last = float(np.abs(dev[-deg_j:]).max()) if deg_j else 0.0
    rem = last * pre * (S + 1) ** (-d / 2) * (rate / (1 - rate) if rate < 1 else 1.0)
    if a_inf != 0.0:
        wv, wb, _ = walk_series(q, d, n_start=1)
        walk = a_inf * pre * wv
        werr = abs(a_inf) * pre * wb
    else:
        walk = np.zeros_like(q)
        werr = np.zeros_like(q)
    values = head + walk
    errors = rem + werr + 8 * _EPS * (absum + np.abs(walk)) * math.log2(S + 2)
    return OracleResult(values, errors, S, a_inf, rate)


# ---------------------------------------------------------- remainder decay
@dataclass
class DecayFit:
    slope: float
    intercept: float
    passed: bool
    by_dominance: bool
    threshold: float
    radii: np.ndarray
    f_values: np.ndarray
    f_errors: np.ndarray
    used: np.ndarray


def remainder_decay_check(problem: DeconvProblem, direction, radii, result: DeconvResult | None = None,
                          margin=0.2) -> DecayFit:
    """Fit ``log|f|`` against ``log|x|`` along ``direction``.

    Only radii where ``|f|`` exceeds ten times its error estimate enter the
    fit.  With fewer than three such radii the check passes by dominance if
    ``|f| < 0.01 g_hat(0) C`` everywhere.  Passing means
    ``slope < -(d - 2) - margin``.
    """
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    radii = np.asarray(radii, dtype=float)
    if result is None:
        result = solve(problem, radii[:, None] * e[None, :])
    f = result.f_values
    err = result.f_error
    thr = -(problem.d - 2) - margin
    used = np.abs(f) > 10 * err
    if used.sum() >= 3:
        slope, icpt = np.polyfit(np.log(radii[used]), np.log(np.abs(f[used])), 1)
        return DecayFit(float(slope), float(icpt), bool(slope < thr), False, thr, radii, f, err, used)
    dominated = bool(np.all(np.abs(f) + err < 0.01 * abs(problem.g0) * result.C_values))
    return DecayFit(float("nan"), float("nan"), dominated, True, thr, radii, f, err, used)

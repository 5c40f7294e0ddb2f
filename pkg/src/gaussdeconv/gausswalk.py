"""Gaussian random walk: step density, two-point function and its asymptotics.

With ``D = N(0, Sigma)`` the n-fold convolution ``D^{*n}`` is ``N(0, n Sigma)``,
so the walk two-point function without the zeroth and first step is the
one-dimensional series

    C(x) = (2 pi)^{-d/2} det(Sigma)^{-1/2} sum_{n>=2} n^{-d/2} exp(-q / 2n),

with ``q = x . Sigma^{-1} x``.  The series is summed directly up to a cut
``N`` and the remainder is added through an Euler-Maclaurin expansion of
Hurwitz-type power sums, so the reported tail bound is the size of the
first neglected correction rather than the (much larger) raw remainder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .kernel import DiagonalCovariance

N_CAP = 10 ** 8
_EPS = np.finfo(float).eps

# B_2, B_4, ..., B_12
_BERNOULLI = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730)


def a_d(d):
    """Leading amplitude ``Gamma((d-2)/2) / (2 pi^{d/2})`` of the Laplacian Green function."""
    if d <= 2:
        raise ValueError("a_d is defined for d > 2")
    return math.gamma((d - 2) / 2) / (2 * math.pi ** (d / 2))


def _check_sigma(sigma):
    sigma = sigma if isinstance(sigma, DiagonalCovariance) else DiagonalCovariance(sigma)
    if sigma.dim < 3:
        raise ValueError(f"the walk needs d >= 3, got d={sigma.dim}")
    return sigma


def step_density(sigma, x):
    """Density of ``N(0, Sigma)`` at ``x`` (shape ``(..., d)``)."""
    sigma = _check_sigma(sigma)
    d = sigma.dim
    return np.exp(-0.5 * sigma.quad_form(x)) / math.sqrt((2 * math.pi) ** d * sigma.det)


def hurwitz_tail(s, a, terms=len(_BERNOULLI) - 1):
    """``sum_{n>=a} n^{-s}`` for real ``s > 1`` and ``a >= 1`` by Euler-Maclaurin.

    Returns ``(value, bound)`` where ``bound`` is the magnitude of the first
    omitted correction (the remainder has the sign and at most the size of
    that term, since all derivatives of ``t^{-s}`` alternate in sign).
    """
    a = float(a)
    val = a ** (1 - s) / (s - 1) + 0.5 * a ** (-s)
    rising = s  # (s)_{2k-1}
    power = a ** (-s - 1)
    fact = 2.0
    for k in range(1, terms + 2):
        term = _BERNOULLI[k - 1] / fact * rising * power
        if k == terms + 1:
            return val, abs(term)
        val += term
        rising *= (s + 2 * k - 1) * (s + 2 * k)
        power /= a * a
        fact *= (2 * k + 1) * (2 * k + 2)
    raise AssertionError("unreachable")


def gauss_series_tail(s, c, n0):
    """``sum_{n>=n0} n^{-s} exp(-c/n)`` for ``n0 >= 4c``.

    Expands the exponential and sums power tails, so the cost does not grow
    with ``n0``.  Returns ``(value, bound)``.
    """
    if n0 < 4 * c or n0 < 8:
        raise ValueError("tail expansion needs n0 >= max(8, 4c)")
    total, bound = 0.0, 0.0
    coef = 1.0
    for j in range(60):
        val, err = hurwitz_tail(s + j, n0)
        total += coef * val
        bound += abs(coef) * err
        nxt = coef * (-c) / (j + 1)
        if abs(nxt) * n0 ** (1 - s - j - 1) < 1e-18 * abs(total):
            # alternating series with decreasing terms: first dropped term bounds it
            bound += abs(nxt) * hurwitz_tail(s + j + 1, n0)[0]
            return total, bound
        coef = nxt
    return total, bound + abs(coef) * n0 ** (1 - s - 60)


def _series_cut(c, start):
    return int(max(64, start + 8, math.ceil(4 * c)))


def walk_series(q, d, n_start=2, rel_tol=1e-12, tail="euler-maclaurin"):
    """``S(q) = sum_{n>=n_start} n^{-d/2} exp(-q/2n)`` for each entry of ``q``.

    Parameters
    ----------
    q : array_like
        Quadratic forms ``x . Sigma^{-1} x`` (nonnegative).
    d : int
    n_start : int
        First index of the series (2 for ``C``, 1 for ``D + C``).
    rel_tol : float
        Only used with ``tail="truncate"``: the series is cut at the first
        ``N`` whose integral tail bound is below ``rel_tol * value``.
    tail : {"euler-maclaurin", "truncate"}

    Returns
    -------
    value, bound, n_max : ndarray
    """
    q = np.asarray(q, dtype=float)
    s = d / 2
    flat = q.ravel()
    value = np.empty_like(flat)
    bound = np.empty_like(flat)
    n_max = np.empty(flat.shape, dtype=np.int64)
    for i, qi in enumerate(flat):
        if not (qi >= 0 and np.isfinite(qi)):
            raise ValueError("quadratic form must be finite and nonnegative")
        c = qi / 2
        if tail == "euler-maclaurin":
            N = _series_cut(c, n_start)
            n = np.arange(n_start, N + 1, dtype=float)
            head = np.sum(n ** (-s) * np.exp(-c / n))
            t, tb = gauss_series_tail(s, c, N + 1)
            value[i] = head + t
            # summation rounding on top of the expansion remainder
            bound[i] = tb + 4 * _EPS * math.log2(N) * value[i]
            n_max[i] = N
        elif tail == "truncate":
            value[i], bound[i], n_max[i] = _truncated_series(s, c, n_start, rel_tol)
        else:
            raise ValueError(f"unknown tail method {tail!r}")
    return value.reshape(q.shape), bound.reshape(q.shape), n_max.reshape(q.shape)


def _truncated_series(s, c, n_start, rel_tol):
    """Plain partial sum, cut by the integral bound ``N^{1-s}/(s-1)``."""
    total = 0.0
    lo = n_start
    chunk = 4096
    while True:
        n = np.arange(lo, lo + chunk, dtype=float)
        total += float(np.sum(n ** (-s) * np.exp(-c / n)))
        N = lo + chunk - 1
        tb = N ** (1 - s) / (s - 1)
        if tb <= rel_tol * total:
            return total, tb, N
        if N >= N_CAP:
            raise ValueError(
                f"rel_tol={rel_tol:g} unreachable within {N_CAP:.0e} terms "
                f"(achieved tail bound {tb / total:.3g} relative)")
        lo = N + 1
        chunk = min(chunk * 2, 1 << 22)


def _prefactor(sigma):
    return 1.0 / math.sqrt((2 * math.pi) ** sigma.dim * sigma.det)


@dataclass(frozen=True)
class WalkTwoPoint:
    """Walk two-point function ``C`` for a fixed step covariance.

    ``include_first_step`` adds the ``n = 1`` term, giving ``D + C`` (the
    ``C_phi`` of the Brownian-motion application when ``Sigma = Id``).
    """

    sigma: DiagonalCovariance
    rel_tol: float = 1e-12
    tail: str = "euler-maclaurin"
    include_first_step: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sigma", _check_sigma(self.sigma))

    def evaluate(self, x):
        """Return ``(value, tail_bound, n_max)`` at points ``x``."""
        q = self.sigma.quad_form(x)
        return self.evaluate_q(q)

    def evaluate_q(self, q):
        pre = _prefactor(self.sigma)
        n0 = 1 if self.include_first_step else 2
        v, b, n = walk_series(q, self.sigma.dim, n0, self.rel_tol, self.tail)
        return pre * v, pre * b, n

    def __call__(self, x):
        return self.evaluate(x)[0]


def walk_c(sigma, x, rel_tol=1e-12, tail="euler-maclaurin"):
    """``C(x) = sum_{n>=2} D^{*n}(x)`` with its tail bound.

    Returns ``(value, tail_bound)`` with the shape of ``x[..., 0]``.
    """
    v, b, _ = WalkTwoPoint(sigma, rel_tol, tail).evaluate(x)
    return v, b


def c_phi(x, d=None, rel_tol=1e-12):
    """``C_phi(x) = sum_{n>=1} phi_n(x)`` for the standard Brownian kernel."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1] if d is None else d
    wt = WalkTwoPoint(DiagonalCovariance.identity(d), rel_tol, include_first_step=True)
    v, b, _ = wt.evaluate(x)
    return v, b


def walk_c_asymptotic(sigma, x):
    """Leading term ``a_d det(Sigma)^{-1/2} (x . Sigma^{-1} x)^{-(d-2)/2}``."""
    sigma = _check_sigma(sigma)
    q = sigma.quad_form(x)
    if np.any(q == 0):
        raise ValueError("the asymptotic formula is singular at x = 0")
    d = sigma.dim
    return a_d(d) / math.sqrt(sigma.det) * q ** (-(d - 2) / 2)


def walk_c_correction(sigma, x, include_first_step=False, c_min=0.5):
    """``C(x) - walk_c_asymptotic(x)`` without cancellation.

    Poisson summation turns ``sum_{n>=1} n^{-s} e^{-c/n}`` into its integral
    ``Gamma(s-1) c^{1-s}`` (the asymptotic term) plus
    ``2 Re sum_{m>=1} F(2 pi m)`` with
    ``F(w) = 2 (c/(i w))^{(1-s)/2} K_{s-1}(2 sqrt(i c w))``.
    The dual series converges like ``exp(-sqrt(4 pi c m))`` and evaluates a
    correction that is far below the rounding level of ``C`` itself.
    Valid for ``c = q/2 >= c_min``.
    """
    sigma = _check_sigma(sigma)
    q = np.asarray(sigma.quad_form(x), dtype=float)
    d = sigma.dim
    s = d / 2
    nu = s - 1
    flat = q.ravel()
    out = np.empty_like(flat)
    for i, qi in enumerate(flat):
        c = qi / 2
        if c < c_min:
            raise ValueError(f"dual series needs x . Sigma^-1 x >= {2 * c_min:g}")
        total = 0.0
        re_z1 = None
        for m in range(1, 10 ** 6):
            w = 2 * math.pi * m
            z = 2 * np.sqrt(1j * c * w)
            if re_z1 is None:
                re_z1 = z.real
            elif z.real - re_z1 > 80:
                break
            term = 2 * (c / (1j * w)) ** ((1 - s) / 2) * special.kve(nu, z) * np.exp(-z)
            total += 2 * term.real
        if not include_first_step:
            total -= math.exp(-c)
        out[i] = total
    return _prefactor(sigma) * out.reshape(q.shape)


def walk_c_recurrence_residual(sigma, x, rel_tol=1e-12, tail="euler-maclaurin",
                               epsrel=1e-11):
    """``|C(x) - D^{*2}(x) - (D * C)(x)|`` with the convolution by quadrature.

    In whitened coordinates ``u = Sigma^{-1/2} y`` the convolution becomes an
    isotropic smoothing of ``c(|v|^2)``; the angular integral of the Gaussian
    is a modified Bessel function, leaving a one-dimensional radial integral
    that is handled by adaptive quadrature.
    """
    sigma = _check_sigma(sigma)
    d = sigma.dim
    nu = d / 2 - 1
    walk = WalkTwoPoint(sigma, rel_tol, tail)
    x = np.asarray(x, dtype=float)
    wn = np.sqrt(sigma.quad_form(x))
    flat = np.atleast_1d(wn).ravel()
    out = np.empty_like(flat)
    lim0 = 2.0 ** (-nu) / math.gamma(nu + 1)
    for i, w in enumerate(flat):
        def integrand(r):
            a = r * w
            ang = lim0 if a < 1e-8 else a ** (-nu) * special.ive(nu, a)
            return r ** (d - 1) * walk.evaluate_q(r * r)[0] * ang * math.exp(-0.5 * (r - w) ** 2)

        hi = w + 16.0
        pts = [w] if w > 0 else None
        conv, _ = integrate.quad(integrand, 0, hi, points=pts, limit=400, epsabs=0,
                                 epsrel=epsrel)
        c_val = walk.evaluate_q(w * w)[0]
        d2 = _prefactor(sigma) * 2 ** (-d / 2) * math.exp(-w * w / 4)
        out[i] = abs(c_val - d2 - conv)
    return out.reshape(np.shape(wn)) if np.ndim(wn) else float(out[0])

"""Monte Carlo for the self-repellent Brownian motion.

Paths are Wiener paths on ``[0, N]`` sampled at ``2m`` equal steps per unit
time; the odd half-steps are the midpoints used by the time quadrature of
the pair interaction

    V(f, g) = int_0^1 v(|f(s) - g(s)|) ds,   H_N = sum_{i<j<=N} V(B_i, B_j).

A single path set with ``N_max`` legs gives the weights ``exp(-alpha H_N)``
and endpoints ``B(N)`` for every ``N <= N_max`` at once (prefix ensembles).
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import special, stats

from .gausswalk import a_d, c_phi
from .kernel import DiagonalCovariance, GaussianMixtureKernel, moment

LOGGER = logging.getLogger(__name__)

MIN_ESS = 100


class SampleSizeError(RuntimeError):
    """Effective sample size too small for plain importance weighting."""


@dataclass(frozen=True)
class SrbmConfig:
    """Model and sampling parameters.

    ``v(r) = v0 * max(0, 1 - r / r0)``; ``m`` substeps per leg for the
    midpoint rule; ``paths`` samples drawn in batches of ``batch_size``
    with per-batch seeds spawned from ``seed``.
    """

    dimension: int = 5
    alpha: float = 0.0
    legs: int = 4
    substeps: int = 16
    v0: float = 1.0
    r0: float = 1.0
    paths: int = 100_000
    seed: int = 0
    batch_size: int = 10_000

    def __post_init__(self):
        if self.dimension < 5:
            raise ValueError("the self-repellent model is studied for d >= 5")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.legs < 1:
            raise ValueError("need at least one leg")
        if self.substeps < 8:
            raise ValueError("substeps per leg must be at least 8")
        if self.v0 < 0 or not self.r0 > 0:
            raise ValueError("need v0 >= 0 and r0 > 0")
        if self.paths < 1 or self.batch_size < 1:
            raise ValueError("paths and batch_size must be positive")

    def to_dict(self):
        return asdict(self)

    def v(self, r):
        return self.v0 * np.maximum(0.0, 1.0 - np.asarray(r) / self.r0)


def interaction(cfg: SrbmConfig, r):
    """Truncated-triangle pair potential."""
    return cfg.v(r)


def hamiltonian(legs, v):
    """``H_N`` for paths sampled at the midpoints of ``m`` substeps per leg.

    Parameters
    ----------
    legs : ndarray, shape (..., N, m, d)
        ``legs[..., i, k]`` is ``B_i((k + 1/2) / m)``.
    v : callable
        Pair potential of the distance.

    Returns
    -------
    ndarray, shape (...)
    """
    legs = np.asarray(legs, dtype=float)
    n = legs.shape[-3]
    out = np.zeros(legs.shape[:-3])
    for i in range(n):
        for j in range(i + 1, n):
            dist = np.sqrt(np.sum((legs[..., i, :, :] - legs[..., j, :, :]) ** 2, axis=-1))
            out = out + np.mean(v(dist), axis=-1)
    return out


@dataclass
class PathEnsemble:
    """Prefix ensemble: ``endpoints[p, N-1] = B_p(N)``, ``energy[p, N-1] = H_N``."""

    endpoints: np.ndarray
    energy: np.ndarray
    alpha: float

    @property
    def weights(self):
        return np.exp(-self.alpha * self.energy)

    def reweighted(self, alpha):
        """Same paths at another ``alpha``."""
        return PathEnsemble(self.endpoints, self.energy, alpha)

    def effective_sample_size(self, n=None):
        w = self.weights
        w = w if n is None else w[:, n - 1]
        return np.sum(w, axis=0) ** 2 / np.sum(w * w, axis=0)

    def mean_weight(self):
        """``||Gamma_{alpha,N}||_1`` estimates for ``N = 1..N_max`` with standard errors."""
        w = self.weights
        return w.mean(axis=0), w.std(axis=0, ddof=1) / math.sqrt(w.shape[0])


def _batch(cfg: SrbmConfig, n_legs, size, rng):
    d, m = cfg.dimension, cfg.substeps
    steps = rng.standard_normal((size, n_legs * 2 * m, d))
    steps *= math.sqrt(1.0 / (2 * m))
    pos = np.cumsum(steps, axis=1)
    # position index l sits at time (l + 1) / 2m; midpoints are the even l
    mids = pos[:, 0::2, :].reshape(size, n_legs, m, d)
    ends = pos[:, 2 * m - 1::2 * m, :]
    energy = np.zeros((size, n_legs))
    for j in range(1, n_legs):
        dist = np.sqrt(np.sum((mids[:, :j] - mids[:, j:j + 1]) ** 2, axis=-1))
        energy[:, j] = np.mean(cfg.v(dist), axis=-1).sum(axis=1)
    return ends, np.cumsum(energy, axis=1)


def sample_paths(cfg: SrbmConfig, n_legs: Optional[int] = None) -> PathEnsemble:
    """Draw ``cfg.paths`` paths with ``n_legs`` legs (default ``cfg.legs``)."""
    n_legs = n_legs or cfg.legs
    n_batches = -(-cfg.paths // cfg.batch_size)
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_batches)
    ends, energy = [], []
    remaining = cfg.paths
    for ss in seeds:
        size = min(cfg.batch_size, remaining)
        e, h = _batch(cfg, n_legs, size, np.random.default_rng(ss))
        ends.append(e)
        energy.append(h)
        remaining -= size
    return PathEnsemble(np.concatenate(ends), np.concatenate(energy), cfg.alpha)


def shell_volume(d, a, b):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * (b ** d - a ** d)


def phi_bin_average(d, t, a, b):
    """Average of ``phi_t`` over the shell ``a <= |x| < b`` (exact, via the chi CDF)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    prob = special.gammainc(d / 2, b * b / (2 * t)) - special.gammainc(d / 2, a * a / (2 * t))
    vol = np.pi ** (d / 2) / special.gamma(d / 2 + 1) * (b ** d - a ** d)
    return prob / vol


def c_phi_bin_average(d, a, b, order=8):
    """Shell average of ``C_phi`` by Gauss-Legendre in the radius."""
    t, w = np.polynomial.legendre.leggauss(order)
    a, b = np.atleast_1d(np.asarray(a, float)), np.atleast_1d(np.asarray(b, float))
    out = np.empty(a.size)
    for i, (lo, hi) in enumerate(zip(a, b)):
        r = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
        x = np.zeros((order, d))
        x[:, 0] = r
        vals, _ = c_phi(x, d)
        num = 0.5 * (hi - lo) * np.sum(w * vals * r ** (d - 1))
        out[i] = num * d / (hi ** d - lo ** d)
    return out


def probe_bins(centers, half_width):
    c = np.asarray(centers, dtype=float)
    a = np.maximum(c - half_width, 0.0)
    return a, c + half_width


@dataclass
class GammaEstimate:
    """Estimate of ``Gamma_{alpha,N}`` at probe radii."""

    n: int
    radii: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    density: np.ndarray
    stderr: np.ndarray
    phi_reference: np.ndarray
    mean_weight: float
    ess: float
    method: str


def _check_ess(ess, n):
    if ess < MIN_ESS:
        raise SampleSizeError(f"effective sample size {ess:.1f} < {MIN_ESS} at N = {n}; "
                              "alpha is too large for plain importance weighting")


def sample_gamma(cfg: SrbmConfig, radii, half_width=0.15, method="histogram",
                 ensemble: PathEnsemble | None = None, n=None) -> GammaEstimate:
    """Density of ``B(N)`` under the weighted measure at ``radii``.

    ``histogram`` averages over shells ``|r - radius| < half_width`` and is
    compared with the shell average of ``phi_N``.  ``kde`` smooths with an
    isotropic Gaussian (Silverman bandwidth) at the points ``radius * e_1``
    and is compared with ``phi_N`` at those points.
    """
    ens = ensemble if ensemble is not None else sample_paths(cfg)
    n = n or cfg.legs
    d = cfg.dimension
    w = ens.weights[:, n - 1]
    ends = ens.endpoints[:, n - 1]
    ess = float(np.sum(w) ** 2 / np.sum(w * w))
    _check_ess(ess, n)
    radii = np.asarray(radii, dtype=float)
    P = w.size
    if method == "histogram":
        lo, hi = probe_bins(radii, half_width)
        r = np.sqrt(np.sum(ends * ends, axis=1))
        vol = np.array([shell_volume(d, a, b) for a, b in zip(lo, hi)])
        dens, se = np.empty(radii.size), np.empty(radii.size)
        for i, (a, b) in enumerate(zip(lo, hi)):
            y = w * ((r >= a) & (r < b)) / vol[i]
            dens[i] = y.mean()
            se[i] = y.std(ddof=1) / math.sqrt(P)
        ref = phi_bin_average(d, n, lo, hi)
    elif method == "kde":
        lo, hi = radii, radii
        sd = float(np.sqrt(np.average(np.sum(ends * ends, axis=1), weights=w) / d))
        h = sd * (4 / (d + 2)) ** (1 / (d + 4)) * ess ** (-1 / (d + 4))
        dens, se = np.empty(radii.size), np.empty(radii.size)
        for i, rad in enumerate(radii):
            x = np.zeros(d)
            x[0] = rad
            z = np.sum((ends - x) ** 2, axis=1) / (h * h)
            y = w * np.exp(-0.5 * z) / (2 * np.pi * h * h) ** (d / 2)
            dens[i] = y.mean()
            se[i] = y.std(ddof=1) / math.sqrt(P)
        ref = (2 * np.pi * n) ** (-d / 2) * np.exp(-radii ** 2 / (2 * n))
    else:
        raise ValueError(f"unknown density method {method!r}")
    return GammaEstimate(n, radii, lo, hi, dens, se, ref, float(w.mean()), ess, method)


@dataclass
class LambdaEstimate:
    value: float
    ci_low: float
    ci_high: float
    slope: float
    slope_stderr: float
    mean_weights: np.ndarray
    monotone: bool


def estimate_lambda_c(cfg: SrbmConfig, n_max, ensemble: PathEnsemble | None = None,
                      level=0.95) -> LambdaEstimate:
    """Regress ``log ||Gamma_N||_1`` on ``N`` for ``N = 1..n_max``.

    ``log m_N ~ c - N log lambda_c``.  Since every weight is at most one,
    ``lambda_c >= 1``, with equality when ``alpha = 0``.
    """
    if n_max < 3:
        raise ValueError("need n_max >= 3 values of N for the regression")
    ens = ensemble if ensemble is not None else sample_paths(cfg, n_max)
    if ens.energy.shape[1] < n_max:
        raise ValueError("ensemble has fewer legs than n_max")
    mw, _ = ens.reweighted(cfg.alpha).mean_weight()
    mw = mw[:n_max]
    N = np.arange(1, n_max + 1, dtype=float)
    y = np.log(mw)
    fit = stats.linregress(N, y)
    slope, se = float(fit.slope), float(fit.stderr)
    t = stats.t.ppf(0.5 + level / 2, n_max - 2) if se > 0 else 0.0
    monotone = bool(np.all(np.diff(mw) <= 0))
    if not monotone:
        LOGGER.warning("mean weights are not monotone in N; interval is unreliable")
    return LambdaEstimate(math.exp(-slope), math.exp(-slope - t * se), math.exp(-slope + t * se),
                          slope, se, mw, monotone)


@dataclass
class DominationReport:
    radii: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    lam: float
    n_max: int
    min_ess: float

    @property
    def margins(self):
        """``5 C_phi - (estimate - 2 se)``; nonnegative everywhere means pass."""
        return self.bound - (self.estimate - 2 * self.stderr)

    @property
    def passed(self):
        return bool(np.all(self.margins >= 0))

    @property
    def strict_margins(self):
        """``5 C_phi - 2 se - estimate``: the bound must hold with two errors to spare."""
        return self.bound - 2 * self.stderr - self.estimate

    @property
    def passed_strict(self):
        return bool(np.all(self.strict_margins >= 0))


def check_domination(cfg: SrbmConfig, lam, n_max, radii, half_width=0.15,
                     ensemble: PathEnsemble | None = None) -> DominationReport:
    """Compare ``sum_{N<=n_max} lam^N Gamma_N`` with ``5 C_phi`` on radial shells.

    Standard errors come from the per-path sums ``Y_p = sum_N lam^N w_pN 1{B_p(N) in shell}``.
    """
    ens = ensemble if ensemble is not None else sample_paths(cfg, n_max)
    ens = ens.reweighted(cfg.alpha)
    d = cfg.dimension
    w = ens.weights[:, :n_max]
    ess = ens.effective_sample_size()[:n_max]
    for n, e in enumerate(ess, start=1):
        _check_ess(e, n)
    radii = np.asarray(radii, dtype=float)
    lo, hi = probe_bins(radii, half_width)
    r = np.sqrt(np.sum(ens.endpoints[:, :n_max] ** 2, axis=-1))
    lamN = lam ** np.arange(1, n_max + 1)
    est, se = np.empty(radii.size), np.empty(radii.size)
    P = w.shape[0]
    for i, (a, b) in enumerate(zip(lo, hi)):
        vol = shell_volume(d, a, b)
        y = np.sum(lamN * w * ((r >= a) & (r < b)), axis=1) / vol
        est[i] = y.mean()
        se[i] = y.std(ddof=1) / math.sqrt(P)
    bound = 5 * c_phi_bin_average(d, lo, hi)
    return DominationReport(radii, lo, hi, est, se, bound, float(lam), int(n_max), float(ess.min()))


@dataclass
class AmplitudeReport:
    lam: float
    sigma2: float
    sigma2_moment: float
    amplitude: float
    measured: Optional[float]
    a_d: float
    alpha_tilde: float
    band: tuple
    decay_constant: float

    @property
    def sigma_agree(self):
        return abs(self.sigma2 - self.sigma2_moment) <= 1e-10 * abs(self.sigma2)

    @property
    def in_band(self):
        return self.band[0] <= self.amplitude <= self.band[1]

    @property
    def measured_agrees(self):
        """Solver amplitude within 2% of ``a_d / sigma^2`` (vacuous if not measured)."""
        return self.measured is None or abs(self.measured / self.amplitude - 1) <= 0.02

    @property
    def passed(self):
        return (self.sigma_agree and self.in_band and self.measured_agrees
                and bool(np.isfinite(self.decay_constant)))


def proxy_kernel(d, perturbation: GaussianMixtureKernel | None, lam=None):
    """``lam * phi_1 + Pi`` with ``lam = 1 - Pi_hat(0)`` unless given."""
    comps = [] if perturbation is None else [(w, c) for w, c in zip(
        perturbation.weights, (DiagonalCovariance(v) for v in perturbation.variances))]
    pi0 = 0.0 if perturbation is None else perturbation.mass()
    if lam is None:
        lam = 1.0 - pi0
    return GaussianMixtureKernel(d, [(lam, DiagonalCovariance.identity(d))] + comps), lam


def _decay_constant(d, perturbation, alpha_tilde):
    """``sup |Pi(x)| (1 + |x|)^{3(d-2)} / alpha_tilde`` over a ray grid."""
    if perturbation is None:
        return 0.0
    r = np.linspace(0, 200, 4001)
    dirs = np.vstack([np.eye(d), np.ones(d) / math.sqrt(d)])
    vals = np.abs(perturbation.evaluate(r[:, None, None] * dirs[None]))
    env = vals * (1 + r[:, None]) ** (3 * (d - 2))
    if env[-1].max() > env.max() * 1e-3:
        # envelope still significant at the edge of the grid: decay too slow
        return math.inf
    return float(env.max() / alpha_tilde) if alpha_tilde > 0 else math.inf


def amplitude_consistency(d, perturbation: GaussianMixtureKernel | None = None, alpha_tilde=0.0,
                          lam=None, radii=None) -> AmplitudeReport:
    """Amplitude ``a_d / sigma^2`` for the proxy kernel ``J = g = lam phi_1 + Pi``.

    ``sigma^2`` is computed twice: from the diagonal second moments
    (derive_sigma) and from per-component absolute moments divided by ``d``.
    When ``radii`` are given, the amplitude is also measured from the
    deconvolution solver as ``|x|^{d-2} H(x)`` at the largest radius.
    """
    from .deconv import DeconvProblem, derive_sigma, solve

    J, lam = proxy_kernel(d, perturbation, lam)
    sig = derive_sigma(J)
    if not sig.is_isotropic():
        raise ValueError("the proxy kernel must be isotropic")
    sigma2 = float(sig.diag[0])
    s2 = lam * 1.0
    if perturbation is not None:
        for w, v in zip(perturbation.weights, perturbation.variances):
            single = GaussianMixtureKernel.gaussian(DiagonalCovariance(v))
            s2 += w * moment(single, 2.0, 1.0) / d
    ad = a_d(d)
    amp = ad / sigma2
    measured = None
    if radii is not None:
        prob = DeconvProblem(J, J)
        x = np.zeros((len(radii), d))
        x[:, 0] = radii
        res = solve(prob, x)
        measured = float(radii[-1] ** (d - 2) * res.H_values[-1] / prob.g0)
    band = (ad * (1 - 5 * alpha_tilde), ad * (1 + 5 * alpha_tilde))
    return AmplitudeReport(lam, sigma2, s2, amp, measured, ad, alpha_tilde, band,
                           _decay_constant(d, perturbation, alpha_tilde))

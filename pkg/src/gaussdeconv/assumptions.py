"""Checks of the moment, criticality and infrared hypotheses on (J, g)."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .kernel import GaussianMixtureKernel, Kernel, _direction_set, moment

LOGGER = logging.getLogger(__name__)

EPSILON_CANDIDATES = (1.0, 0.5, 0.25, 0.1)
CRITICALIZED_TOL = 1e-10


@dataclass(frozen=True)
class AssumptionConfig:
    """Tolerances and scan sizes for :func:`check_assumptions`."""

    criticality_tol: float = 1e-6
    epsilon_candidates: tuple = EPSILON_CANDIDATES
    ir_radii: int = 512
    ir_directions: int = 64
    ir_k_min: float = 1e-4
    ir_k_max: float = 40.0
    evenness_samples: int = 64


@dataclass
class MomentCheck:
    order: float
    p: float
    value: float
    passed: bool


@dataclass
class AssumptionReport:
    """Verdict on the hypotheses for one kernel."""

    name: str
    dimension: int
    evenness: bool
    moments: list
    epsilon: Optional[float]
    epsilon_value: float
    epsilon_passed: bool
    high_moment_applicable: bool
    high_moment_p: Optional[float] = None
    high_moment_p_star: Optional[float] = None
    high_moment_value: float = float("nan")
    high_moment_passed: bool = True
    criticality: Optional[float] = None
    criticality_passed: bool = True
    infrared_constant: Optional[float] = None
    infrared_at_boundary: bool = False
    notes: list = field(default_factory=list)

    @property
    def moments_passed(self):
        return all(m.passed for m in self.moments)

    @property
    def infrared_passed(self):
        return self.infrared_constant is None or self.infrared_constant > 0

    @property
    def passed(self):
        return (self.evenness and self.moments_passed and self.epsilon_passed
                and self.high_moment_passed and self.criticality_passed
                and self.infrared_passed)

    def to_dict(self):
        out = asdict(self)
        out["moments_passed"] = self.moments_passed
        out["infrared_passed"] = self.infrared_passed
        out["passed"] = self.passed
        return out

    def summary(self):
        def flag(ok):
            return "pass" if ok else "FAIL"

        lines = [f"[{self.name}] d={self.dimension}: {flag(self.passed)}",
                 f"  evenness: {flag(self.evenness)}"]
        for m in self.moments:
            lines.append(f"  || |x|^{m.order:g} h ||_{m.p:g} = {m.value:.6g}: {flag(m.passed)}")
        eps = "none" if self.epsilon is None else f"{self.epsilon:g}"
        lines.append(f"  epsilon moment (eps={eps}): {self.epsilon_value:.6g}: "
                     f"{flag(self.epsilon_passed)}")
        if self.high_moment_applicable:
            lines.append(
                f"  || |x|^(d-2) h ||_p with p={self.high_moment_p}, p*={self.high_moment_p_star:g}:"
                f" {self.high_moment_value:.6g}: {flag(self.high_moment_passed)}")
        if self.criticality is not None:
            lines.append(f"  |J_hat(0) - 1| = {self.criticality:.3g}: {flag(self.criticality_passed)}")
        if self.infrared_constant is not None:
            lines.append(f"  K_IR = {self.infrared_constant:.6g}: {flag(self.infrared_passed)}")
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)


@dataclass(frozen=True)
class InfraredScan:
    """Result of the infrared grid scan."""

    value: float
    k_at_min: np.ndarray
    at_boundary: bool
    tail_bound: Optional[float]


def _ir_directions(d, n):
    return np.concatenate([np.eye(d), -np.eye(d), _direction_set(d, n)])


def infrared_scan(J: Kernel, radii=512, directions=64, k_min=1e-4, k_max=40.0) -> InfraredScan:
    """Scan ``(J_hat(0) - J_hat(k)) / (|k|^2 ^ 1)`` over log-spaced shells."""
    d = J.dimension
    # a radial transform is the same along every direction
    dirs = np.eye(d)[:1] if J.is_radial() else _ir_directions(d, directions)
    rad = np.geomspace(k_min, k_max, radii)
    if k_min < 1.0 < k_max:
        # the kink of |k|^2 ^ 1 is where monotone ratios attain their minimum
        rad[np.argmin(np.abs(np.log(rad)))] = 1.0
    k = rad[:, None, None] * dirs[None, :, :]
    deficit = J.fourier_deficit(k)
    # J_hat(0) - J_hat(k) with J_hat(0) taken as the kernel's actual mass
    ratio = deficit / np.minimum(rad * rad, 1.0)[:, None]
    idx = np.unravel_index(np.argmin(ratio), ratio.shape)
    value = float(ratio[idx])
    at_boundary = idx[0] in (0, radii - 1)
    tail = None
    if isinstance(J, GaussianMixtureKernel):
        # beyond k_max: J_hat(k) <= sum_{w>0} w exp(-s_min k_max^2/2)
        w = J.weights
        smin = J.variances.min(axis=1)
        upper = float(np.sum(np.where(w > 0, w, 0.0) * np.exp(-0.5 * smin * k_max ** 2)))
        tail = J.mass() - upper
        if tail < value:
            value, at_boundary = tail, True
    return InfraredScan(value, rad[idx[0]] * dirs[idx[1]], bool(at_boundary), tail)


def estimate_infrared(J: Kernel, radii=512, directions=64, k_min=1e-4, k_max=40.0) -> float:
    """Infimum of ``(J_hat(0) - J_hat(k)) / (|k|^2 ^ 1)`` over the scan grid.

    A value ``<= 0`` means the infrared bound fails.  When the minimum sits
    on the first or last shell a warning is logged, since the grid may be
    too coarse to locate it.
    """
    scan = infrared_scan(J, radii, directions, k_min, k_max)
    if scan.at_boundary:
        LOGGER.warning("infrared infimum located at the scan boundary (|k|=%.3g)",
                       float(np.linalg.norm(scan.k_at_min)))
    return scan.value


def criticalize(J0: Kernel) -> Kernel:
    """Rescale ``J0`` so that its Fourier transform equals 1 at the origin."""
    m = J0.mass()
    if not m > 0:
        raise ValueError(f"cannot criticalize a kernel with J_hat(0) = {m:g} <= 0")
    if m == 1.0:
        return J0
    return J0.scaled(1.0 / m)


class MomentInterpolation(NamedTuple):
    p_b: float
    p_b_star: float
    strict: bool


def interpolate_moment_exponent(a, b, p_a, d) -> MomentInterpolation:
    """Hoelder interpolation between ``|x|^2 h`` in L^1 and ``|x|^a h`` in L^{p_a}.

    ``1/p_b = (a - b)/(a - 2) + (b - 2)/((a - 2) p_a)``, together with the
    critical exponent ``p_b* = d/(d - b + 2)``.
    """
    if not (2 <= b <= a <= d + 2):
        raise ValueError(f"need 2 <= b <= a <= d + 2, got a={a}, b={b}, d={d}")
    if p_a < 1:
        raise ValueError("p_a must be >= 1")
    if a == b:
        p_b = float(p_a)
    else:
        inv = (a - b) / (a - 2) + (b - 2) / ((a - 2) * p_a)
        p_b = 1.0 / inv
    denom = d - b + 2
    p_b_star = d / denom if denom > 0 else math.inf
    return MomentInterpolation(p_b, p_b_star, p_b < p_b_star)


def _evenness(h: Kernel, n):
    rng = np.random.default_rng(12345)
    x = rng.normal(scale=2.0, size=(n, h.dimension))
    return bool(np.array_equal(h.evaluate(x), h.evaluate(-x)))


def _finite(v):
    return bool(np.isfinite(v))


def _report(h: Kernel, name, cfg: AssumptionConfig) -> AssumptionReport:
    d = h.dimension
    moments = []
    for order in (0.0, 2.0):
        for p in (1.0, 2.0):
            v = moment(h, order, p)
            moments.append(MomentCheck(order, p, v, _finite(v)))

    eps_used, eps_val, eps_ok = None, math.inf, False
    for eps in cfg.epsilon_candidates:
        v = moment(h, 2 + eps, 1.0)
        if _finite(v):
            eps_used, eps_val, eps_ok = eps, v, True
            break
        eps_val = v

    rep = AssumptionReport(name, d, _evenness(h, cfg.evenness_samples), moments,
                           eps_used, eps_val, eps_ok, high_moment_applicable=d > 4)
    if d > 4:
        p_star = d / 4
        rep.high_moment_p_star = p_star
        rep.high_moment_passed = False
        l2 = moment(h, d - 2, 2.0)
        for frac in (0.0, 0.5, 0.9, 0.99):
            p = 1.0 + frac * (p_star - 1.0)
            v = moment(h, d - 2, p)
            rep.high_moment_value = v
            if _finite(v) and _finite(l2):
                rep.high_moment_p = p
                rep.high_moment_passed = True
                break
        if not _finite(l2):
            rep.notes.append("|x|^(d-2) h is not in L^2")
    return rep


def check_assumptions(J: Kernel, g: Kernel, config: AssumptionConfig | None = None):
    """Run every hypothesis check; failures are report entries, not exceptions.

    Returns
    -------
    (AssumptionReport, AssumptionReport)
        Reports for ``J`` (with criticality and infrared entries) and ``g``.
    """
    cfg = config or AssumptionConfig()
    if J.dimension != g.dimension:
        raise ValueError(f"J and g live in different dimensions ({J.dimension}, {g.dimension})")
    if J.dimension < 3:
        raise ValueError("the hypotheses need d >= 3")
    rj = _report(J, "J", cfg)
    rg = _report(g, "g", cfg)
    rj.criticality = abs(J.mass() - 1.0)
    rj.criticality_passed = rj.criticality <= cfg.criticality_tol
    try:
        scan = infrared_scan(J, cfg.ir_radii, cfg.ir_directions, cfg.ir_k_min, cfg.ir_k_max)
        rj.infrared_constant = scan.value
        rj.infrared_at_boundary = scan.at_boundary
        if scan.at_boundary:
            rj.notes.append("infrared infimum at scan boundary; grid may be too coarse")
    except Exception as exc:  # quadrature failure on tabulated kernels
        rj.infrared_constant = float("nan")
        rj.notes.append(f"infrared scan failed: {exc}")
    if not np.isfinite(rj.infrared_constant):
        rj.infrared_constant = -math.inf
    return rj, rg

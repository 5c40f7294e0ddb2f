import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaussdeconv.gausswalk import a_d, c_phi
from gaussdeconv.kernel import DiagonalCovariance, GaussianMixtureKernel
from gaussdeconv.srbm import (SampleSizeError, SrbmConfig, amplitude_consistency,
                              check_domination, estimate_lambda_c, hamiltonian, phi_bin_average,
                              sample_gamma, sample_paths)

from . import oracles

SMALL = dict(paths=20_000, batch_size=5_000)


# --------------------------------------------------------------- config
@pytest.mark.parametrize("bad", [dict(dimension=4), dict(alpha=-0.1), dict(substeps=4),
                                 dict(legs=0), dict(r0=0.0), dict(v0=-1.0), dict(paths=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SrbmConfig(**bad)


def test_interaction_support():
    cfg = SrbmConfig(v0=2.0, r0=1.5)
    r = np.array([0.0, 0.75, 1.5, 3.0])
    assert np.allclose(cfg.v(r), [2.0, 1.0, 0.0, 0.0])
    assert np.all(cfg.v(np.linspace(0, 10, 101)) >= 0)


# ----------------------------------------------------------- hamiltonian
def test_hamiltonian_coincident_legs():
    cfg = SrbmConfig(v0=0.7, r0=1.0)
    leg = np.random.default_rng(0).normal(size=(16, 5))
    legs = np.stack([leg, leg])
    assert hamiltonian(legs, cfg.v) == pytest.approx(0.7)


def test_hamiltonian_separated_legs():
    cfg = SrbmConfig()
    leg = np.zeros((16, 5))
    legs = np.stack([leg, leg + 5.0])
    assert hamiltonian(legs, cfg.v) == 0.0


def test_hamiltonian_single_leg():
    assert hamiltonian(np.zeros((1, 16, 5)), SrbmConfig().v) == 0.0


def test_hamiltonian_matches_sampler_energy():
    cfg = SrbmConfig(legs=3, paths=50, batch_size=50, seed=5)
    rng = np.random.default_rng(np.random.SeedSequence(5).spawn(1)[0])
    m, d = cfg.substeps, cfg.dimension
    steps = rng.standard_normal((50, 3 * 2 * m, d)) * math.sqrt(1 / (2 * m))
    pos = np.cumsum(steps, axis=1)
    mids = pos[:, 0::2].reshape(50, 3, m, d)
    ens = sample_paths(cfg)
    assert np.allclose(ens.energy[:, -1], hamiltonian(mids, cfg.v), rtol=1e-12)


# ---------------------------------------------------------- ensembles
def test_weights_in_unit_interval():
    cfg = SrbmConfig(alpha=0.3, legs=5, **SMALL)
    w = sample_paths(cfg).weights
    assert np.all((w > 0) & (w <= 1))


def test_alpha_zero_weights_are_one():
    assert np.all(sample_paths(SrbmConfig(alpha=0.0, legs=3, **SMALL)).weights == 1.0)


def test_weight_monotone_in_alpha():
    ens = sample_paths(SrbmConfig(alpha=0.0, legs=4, **SMALL))
    w1 = ens.reweighted(0.05).weights
    w2 = ens.reweighted(0.2).weights
    assert np.all(w2 <= w1)


def test_determinism():
    cfg = SrbmConfig(alpha=0.1, legs=3, **SMALL)
    a, b = sample_paths(cfg), sample_paths(cfg)
    assert np.array_equal(a.endpoints, b.endpoints) and np.array_equal(a.energy, b.energy)
    ga = sample_gamma(cfg, [1.0, 2.0], ensemble=a)
    gb = sample_gamma(cfg, [1.0, 2.0], ensemble=b)
    assert np.array_equal(ga.density, gb.density) and np.array_equal(ga.stderr, gb.stderr)


def test_endpoint_covariance():
    ens = sample_paths(SrbmConfig(legs=4, **SMALL))
    cov = np.cov(ens.endpoints[:, 3].T)
    assert np.allclose(np.diag(cov), 4.0, rtol=0.05)


# ------------------------------------------------------ density estimates
def test_phi_bin_average_matches_oracle():
    a, b = np.array([0.5, 2.0]), np.array([0.8, 2.3])
    got = phi_bin_average(5, 4.0, a, b)
    ref = [float(oracles.chi_shell_average(5, 4, ai, bi)) for ai, bi in zip(a, b)]
    assert np.allclose(got, ref, rtol=1e-12)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_alpha_zero_reduces_to_wiener(n):
    cfg = SrbmConfig(alpha=0.0, legs=n, **SMALL)
    probes = np.linspace(0.3, 2.5, 10) * math.sqrt(n)
    est = sample_gamma(cfg, probes)
    z = np.abs(est.density - est.phi_reference) / est.stderr
    assert z.max() <= 3.0


def test_kde_method_close_to_phi():
    cfg = SrbmConfig(alpha=0.0, legs=2, **SMALL)
    est = sample_gamma(cfg, [0.0, 1.0, 2.0], method="kde")
    assert np.allclose(est.density, est.phi_reference, rtol=0.35)


def test_unknown_method():
    with pytest.raises(ValueError):
        sample_gamma(SrbmConfig(legs=2, paths=500, batch_size=500), [1.0], method="spline")


def test_mirror_symmetry():
    cfg = SrbmConfig(alpha=0.1, legs=3, **SMALL)
    ens = sample_paths(cfg).reweighted(cfg.alpha)
    ends, w = ens.endpoints[:, 2], ens.weights[:, 2]
    x = np.array([1.5, -0.5, 0.5, 0.0, 1.0])
    h = 1.0
    for sgn in (1, -1):
        inside = np.sum((ends - sgn * x) ** 2, axis=1) < h * h
        y = w * inside
        if sgn == 1:
            m1, s1 = y.mean(), y.std(ddof=1) / math.sqrt(y.size)
        else:
            m2, s2 = y.mean(), y.std(ddof=1) / math.sqrt(y.size)
    assert abs(m1 - m2) <= 3 * math.hypot(s1, s2)


def test_mass_is_mean_weight():
    cfg = SrbmConfig(alpha=0.1, legs=4, **SMALL)
    est = sample_gamma(cfg, [1.0])
    assert 0 < est.mean_weight <= 1


def test_stderr_scales_with_paths():
    probes = [1.0, 2.0, 3.0]
    a = sample_gamma(SrbmConfig(legs=2, paths=10_000, batch_size=5_000), probes)
    b = sample_gamma(SrbmConfig(legs=2, paths=20_000, batch_size=5_000), probes)
    ratio = b.stderr / a.stderr
    assert np.all(np.abs(ratio / (1 / math.sqrt(2)) - 1) <= 0.2)


def test_small_effective_sample_size_raises():
    cfg = SrbmConfig(alpha=200.0, legs=6, paths=2000, batch_size=2000, r0=3.0)
    with pytest.raises(SampleSizeError):
        sample_gamma(cfg, [1.0])


# ------------------------------------------------------------- lambda_c
def test_lambda_c_alpha_zero():
    lam = estimate_lambda_c(SrbmConfig(alpha=0.0, **SMALL), 4)
    assert lam.value == 1.0 and lam.ci_low == 1.0 and lam.ci_high == 1.0


def test_lambda_c_needs_three_values():
    with pytest.raises(ValueError):
        estimate_lambda_c(SrbmConfig(**SMALL), 1)


def test_lambda_c_positive_alpha_at_least_one():
    lam = estimate_lambda_c(SrbmConfig(alpha=0.1, **SMALL), 6)
    assert lam.value >= 1.0 and lam.ci_low <= lam.value <= lam.ci_high
    assert lam.monotone


# ------------------------------------------------------------ domination
def test_domination_alpha_zero_origin_exact():
    # sum 0.9^N phi_N(0) <= C_phi(0) termwise
    lhs = sum(0.9 ** n * (2 * math.pi * n) ** -2.5 for n in range(1, 2000))
    c0, _ = c_phi(np.zeros(5))
    assert lhs < c0 < 5 * c0


def test_domination_alpha_zero_mc():
    cfg = SrbmConfig(alpha=0.0, legs=4, **SMALL)
    rep = check_domination(cfg, 0.9, 4, [0.3, 1.0, 2.0, 4.0])
    assert rep.passed and rep.passed_strict


# ------------------------------------------------------------- amplitude
def test_amplitude_pure_gaussian():
    rep = amplitude_consistency(5)
    assert rep.amplitude == pytest.approx(a_d(5), rel=1e-14)
    assert rep.lam == 1.0 and rep.passed


def test_amplitude_perturbed():
    pert = GaussianMixtureKernel(5, [(0.05, DiagonalCovariance.identity(5, 0.5)),
                                     (-0.03, DiagonalCovariance.identity(5, 2.0))])
    rep = amplitude_consistency(5, pert, alpha_tilde=0.05, radii=np.array([20.0, 30.0]))
    assert abs(rep.amplitude / a_d(5) - 1) <= 0.25
    assert abs(rep.sigma2 - rep.sigma2_moment) <= 1e-10 * rep.sigma2
    assert rep.measured_agrees and rep.passed


def test_amplitude_slow_perturbation_flagged():
    from gaussdeconv.srbm import _decay_constant
    wide = GaussianMixtureKernel(5, [(0.05, DiagonalCovariance.identity(5, 4000.0))])
    assert _decay_constant(5, wide, 0.05) == math.inf

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaussdeconv.assumptions import estimate_infrared
from gaussdeconv.deconv import (DeconvProblem, GridBudgetError, GridSpec, c_hat, derive_sigma,
                                e_hat, f_hat, h_hat, neumann_series_oracle,
                                remainder_decay_check, solve, solve_direct_quadrature)
from gaussdeconv.gausswalk import walk_c
from gaussdeconv.kernel import DiagonalCovariance, GaussianMixtureKernel, convolve


def iso(d, comps):
    return GaussianMixtureKernel(d, [(w, DiagonalCovariance.identity(d, s)) for w, s in comps])


def signed_mixture(d):
    return iso(d, [(1.25, 1.0), (-0.25, 2.0)])


def aniso_problem():
    J = GaussianMixtureKernel(3, [(1.0, DiagonalCovariance([1.0, 2.0, 3.0]))])
    return DeconvProblem(J, GaussianMixtureKernel.standard(3))


# -------------------------------------------------------------- derive_sigma
def test_derive_sigma_examples():
    J = GaussianMixtureKernel(3, [(1.0, DiagonalCovariance([1.0, 2.0, 3.0]))])
    assert np.allclose(derive_sigma(J).diag, [1, 2, 3])
    assert np.allclose(derive_sigma(GaussianMixtureKernel.standard(4)).diag, 1.0)
    assert np.allclose(derive_sigma(signed_mixture(5)).diag, 0.75, rtol=1e-14)


def test_derive_sigma_rejects_nonpositive():
    J = iso(3, [(2.0, 1.0), (-1.0, 3.0)])
    with pytest.raises(ValueError):
        derive_sigma(J)


# ------------------------------------------------------------------- e_hat
def rand_k(d, n, seed, scale=2.0):
    return np.random.default_rng(seed).normal(scale=scale, size=(n, d))


@pytest.mark.parametrize("d", [3, 5])
def test_e_hat_vanishes_identically_for_gaussian(d):
    D = GaussianMixtureKernel.standard(d)
    p = DeconvProblem(D, D)
    k = rand_k(d, 200, 1)
    assert np.all(e_hat(p, k) == 0.0)
    assert np.all(f_hat(p, k) == 0.0)


def test_e_hat_zero_at_origin():
    p = DeconvProblem(signed_mixture(5), GaussianMixtureKernel.standard(5))
    assert e_hat(p, np.zeros(5)) == 0.0


def test_e_hat_small_k_scaling():
    p = DeconvProblem(signed_mixture(3), iso(3, [(0.7, 1.0), (0.3, 3.0)]))
    t = np.geomspace(1e-3, 1e-1, 12)
    k = t[:, None] * (np.ones(3) / math.sqrt(3))[None, :]
    slope = np.polyfit(np.log(t), np.log(np.abs(e_hat(p, k))), 1)[0]
    assert slope >= 2 + 1.0 / 2  # epsilon = 1 for mixtures


def test_f_hat_rejects_origin():
    p = DeconvProblem(signed_mixture(3), GaussianMixtureKernel.standard(3))
    with pytest.raises(ValueError):
        f_hat(p, np.zeros(3))


def test_f_hat_large_k_bound():
    p = DeconvProblem(signed_mixture(3), GaussianMixtureKernel.standard(3))
    kir_j = estimate_infrared(p.J)
    kir_d = estimate_infrared(p.D)
    k = rand_k(3, 300, 2, 3.0)
    k = k[np.linalg.norm(k, axis=1) >= 1]
    assert np.all(np.abs(f_hat(p, k)) <= np.abs(e_hat(p, k)) / (kir_j * kir_d) * (1 + 1e-9))


def test_f_hat_small_k_bounded_power():
    p = DeconvProblem(signed_mixture(3), iso(3, [(0.7, 1.0), (0.3, 3.0)]))
    t = np.geomspace(1e-3, 1e-1, 12)
    k = t[:, None] * np.eye(3)[0][None, :]
    slope = np.polyfit(np.log(t), np.log(np.abs(f_hat(p, k))), 1)[0]
    assert slope >= 1.0 - 2 - 1e-6


@settings(max_examples=25)
@given(st.integers(3, 6), st.integers(0, 10 ** 6))
def test_decomposition_consistency(d, seed):
    J = iso(d, [(1.25, 1.0), (-0.25, 2.0)])
    g = GaussianMixtureKernel(d, [(0.6, DiagonalCovariance.identity(d, 0.5)),
                                  (0.4, DiagonalCovariance.identity(d, 3.0))])
    p = DeconvProblem(J, g)
    k = rand_k(d, 20, seed, 1.5)
    lhs = h_hat(p, k)
    rhs = p.g0 * c_hat(p, k) + f_hat(p, k)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-14 * np.abs(p.g0 * c_hat(p, k)).max())


# ----------------------------------------------------------------- solve
def test_solve_cancellation_example():
    D = GaussianMixtureKernel.standard(5)
    x = np.array([[2.0, 0, 0, 0, 0]])
    res = solve(DeconvProblem(D, D), x)
    c, _ = walk_c(DiagonalCovariance.identity(5), x)
    assert res.f_values[0] == 0.0
    assert res.H_values[0] == pytest.approx(c[0], rel=1e-3)


def test_result_invariants():
    p = DeconvProblem(signed_mixture(5), iso(5, [(0.7, 1.0), (0.3, 2.0)]))
    x = np.random.default_rng(3).normal(scale=4, size=(10, 5))
    res = solve(p, x)
    assert np.array_equal(res.H_values, p.g0 * res.C_values + res.f_values)
    assert np.array_equal(res.G_values, res.H_values + p.g.evaluate(x))
    assert np.all(res.error >= 0) and np.all(res.f_error >= 0)
    assert res.rows().shape == (10, 5 + 5)


def test_solve_symmetry_and_isotropy():
    p = DeconvProblem(signed_mixture(5), GaussianMixtureKernel.standard(5))
    rng = np.random.default_rng(4)
    x = rng.normal(size=(6, 5))
    r1 = solve(p, x)
    r2 = solve(p, -x)
    assert np.array_equal(r1.H_values, r2.H_values)
    # same radius along random directions
    u = rng.normal(size=(6, 5))
    u *= (3.0 / np.linalg.norm(u, axis=1))[:, None]
    h = solve(p, u).H_values
    assert np.ptp(h) <= 1e-3 * abs(h.mean())


def test_grid_engine_symmetry():
    p = aniso_problem()
    x = np.array([[0.5, 1.0, -1.5], [2.0, 0.0, 1.0]])
    assert np.allclose(solve(p, x).H_values, solve(p, -x).H_values, rtol=1e-12)


def _smoothing_matrix(rho, nodes, s):
    """Weights of ``E[h(|x + Z|)]`` for ``Z ~ N(0, s I_3)``, ``|x| = rho``."""
    r = nodes[None, :]
    rho = rho[:, None]
    return r / (rho * math.sqrt(2 * math.pi * s)) * (
        np.exp(-(r - rho) ** 2 / (2 * s)) - np.exp(-(r + rho) ** 2 / (2 * s)))


def test_defining_equation_residual_d3():
    J = signed_mixture(3)
    g = iso(3, [(0.7, 1.0), (0.3, 2.0)])
    p = DeconvProblem(J, g)
    rho = np.array([0.5, 2.0, 5.0])
    t, w = np.polynomial.legendre.leggauss(20)
    edges = np.arange(0.0, 25.0 + 1e-12, 0.25)
    nodes = np.concatenate([0.5 * (b - a) * t + 0.5 * (a + b) for a, b in zip(edges, edges[1:])])
    weights = np.concatenate([0.5 * (b - a) * w for a, b in zip(edges, edges[1:])])
    e1 = np.eye(3)[0]
    H_nodes = solve(p, nodes[:, None] * e1[None, :]).H_values
    res = solve(p, rho[:, None] * e1[None, :])
    JH = sum(wc * _smoothing_matrix(rho, nodes, s) @ (weights * H_nodes)
             for wc, s in [(1.25, 1.0), (-0.25, 2.0)])
    Jg = convolve(J, g).evaluate(rho[:, None] * e1[None, :])
    resid = res.H_values - JH - Jg
    assert np.all(np.abs(resid) <= 1e-10 * np.abs(res.H_values) + res.error)
    # same statement for G = H + g:  (delta - J) * G = g
    G_nodes = H_nodes + g.evaluate(nodes[:, None] * e1[None, :])
    JG = sum(wc * _smoothing_matrix(rho, nodes, s) @ (weights * G_nodes)
             for wc, s in [(1.25, 1.0), (-0.25, 2.0)])
    g_vals = g.evaluate(rho[:, None] * e1[None, :])
    assert np.all(np.abs(res.G_values - JG - g_vals) <= 1e-10 * np.abs(res.G_values) + res.error)


def test_grid_budget_error():
    J = GaussianMixtureKernel(4, [(1.0, DiagonalCovariance([1.0, 2.0, 3.0, 4.0]))])
    p = DeconvProblem(J, GaussianMixtureKernel.standard(4), grid=GridSpec(memory_budget=1e3))
    with pytest.raises(GridBudgetError):
        solve(p, np.ones((1, 4)))


def test_criticality_guard():
    with pytest.raises(ValueError, match="not critical"):
        DeconvProblem(iso(3, [(0.9, 1.0)]), GaussianMixtureKernel.standard(3))


def test_subcritical_exponential_decay():
    p = DeconvProblem(iso(3, [(0.9, 1.0)]), GaussianMixtureKernel.standard(3), subcritical=True)
    r = np.linspace(4, 16, 7)
    res = solve(p, r[:, None] * np.eye(3)[0][None, :])
    assert np.all(res.C_values == 0)
    slope = np.polyfit(r, np.log(res.H_values), 1)[0]
    assert slope < 0
    # exponential, not power law: log-log slope keeps steepening
    ll = np.diff(np.log(res.H_values)) / np.diff(np.log(r))
    assert ll[-1] < ll[0] < -1


# ------------------------------------------------------- oracles
def test_direct_quadrature_gaussian_origin():
    D = GaussianMixtureKernel.standard(3)
    p = DeconvProblem(D, D)
    v, e = solve_direct_quadrature(p, np.zeros((1, 3)))
    c, _ = walk_c(DiagonalCovariance.identity(3), np.zeros(3))
    assert v[0] == pytest.approx(c, rel=1e-4)


def test_direct_quadrature_even():
    p = aniso_problem()
    x = np.array([[1.0, -2.0, 0.5]])
    v1, _ = solve_direct_quadrature(p, x)
    v2, _ = solve_direct_quadrature(p, -x)
    assert v1[0] == v2[0]


def test_direct_quadrature_rejects_other_dimensions():
    D = GaussianMixtureKernel.standard(5)
    with pytest.raises(ValueError):
        solve_direct_quadrature(DeconvProblem(D, D), np.zeros((1, 5)))


def test_direct_quadrature_matches_solve_at_ten():
    p = DeconvProblem(signed_mixture(3), iso(3, [(0.7, 1.0), (0.3, 2.0)]))
    x = np.array([[10.0, 0, 0], [0, 6.0, 8.0]])
    v, e = solve_direct_quadrature(p, x)
    res = solve(p, x)
    assert np.all(np.abs(v - res.H_values) <= e + res.error)


def test_neumann_oracle_matches_solve_d5():
    p = DeconvProblem(signed_mixture(5), signed_mixture(5))
    r = np.array([1.0, 5.0, 20.0])
    x = r[:, None] * np.eye(5)[0][None, :]
    o = neumann_series_oracle(p.J, p.g, x)
    res = solve(p, x)
    assert np.all(np.abs(o.values - res.H_values) <= o.errors + res.error)


def test_neumann_oracle_gaussian_equals_walk():
    D = GaussianMixtureKernel.standard(5)
    x = np.array([[0.0] * 5, [3.0, 0, 0, 0, 0]])
    o = neumann_series_oracle(D, D, x)
    c, _ = walk_c(DiagonalCovariance.identity(5), x)
    assert np.allclose(o.values, c, rtol=1e-10)


# --------------------------------------------------- remainder decay
def test_decay_check_gaussian_passes_by_dominance():
    D = GaussianMixtureKernel.standard(5)
    fit = remainder_decay_check(DeconvProblem(D, D), np.eye(5)[0], np.linspace(10, 40, 7))
    assert fit.passed and fit.by_dominance


def test_decay_check_anisotropic_directions():
    S0 = [1, 1, 1, 1, 4]
    J = GaussianMixtureKernel(5, [(1.0, DiagonalCovariance(S0))])
    g = GaussianMixtureKernel(5, [(0.7, DiagonalCovariance(S0)),
                                  (0.3, DiagonalCovariance([2 * s for s in S0]))])
    p = DeconvProblem(J, g)
    for e in (np.eye(5)[0], np.eye(5)[4]):
        assert remainder_decay_check(p, e, np.linspace(2, 12, 6)).passed


def test_neumann_oracle_three_scales():
    # g reaches 3 S0 while J stops at 2 S0; the recursion must still settle
    J = signed_mixture(5)
    g = iso(5, [(0.7, 1.0), (0.3, 3.0)])
    x = np.array([[3.0, 0, 0, 0, 0]])
    o = neumann_series_oracle(J, g, x)
    res = solve(DeconvProblem(J, g), x)
    assert o.terms < 1000
    assert abs(o.values[0] - res.H_values[0]) <= o.errors[0] + res.error[0]

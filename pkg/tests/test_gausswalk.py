import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gaussdeconv.gausswalk import (WalkTwoPoint, a_d, c_phi, step_density, walk_c,
                                   walk_c_asymptotic, walk_c_correction,
                                   walk_c_recurrence_residual)
from gaussdeconv.kernel import DiagonalCovariance

from . import oracles

variance = st.floats(min_value=0.3, max_value=4.0)


@st.composite
def sigma_and_point(draw, d=None, r_max=20.0):
    d = d if d is not None else draw(st.integers(3, 6))
    sig = DiagonalCovariance([draw(variance) for _ in range(d)])
    x = np.array([draw(st.floats(-r_max, r_max)) for _ in range(d)])
    return sig, x


# -------------------------------------------------------------- step density
def test_step_density_normalisation():
    assert step_density(DiagonalCovariance.identity(3), np.zeros(3)) == pytest.approx(
        (2 * math.pi) ** -1.5, rel=1e-15)
    assert step_density(DiagonalCovariance.identity(5, 2.0), np.zeros(5)) == pytest.approx(
        (4 * math.pi) ** -2.5, rel=1e-14)


def test_step_density_rejects_low_dimension():
    with pytest.raises(ValueError):
        step_density(DiagonalCovariance([1.0, 4.0]), np.zeros(2))


# -------------------------------------------------------------------- walk_c
def test_walk_c_origin_d5():
    v, b = walk_c(DiagonalCovariance.identity(5), np.zeros(5))
    ref = float(oracles.walk_c([1] * 5, [0] * 5))
    assert ref == pytest.approx(3.450840064082882e-3, rel=1e-14)  # frozen
    assert v == pytest.approx(ref, rel=1e-12)
    assert 0 <= b <= 1e-12 * v


def test_walk_c_d3_far_point_near_leading_term():
    v, _ = walk_c(DiagonalCovariance.identity(3), np.array([10.0, 0, 0]))
    assert v == pytest.approx(1 / (2 * math.pi * 10), rel=0.02)
    assert v == pytest.approx(float(oracles.walk_c([1] * 3, [10, 0, 0])), rel=1e-11)


@given(sigma_and_point())
def test_walk_c_matches_oracle(sx):
    sig, x = sx
    v, b = walk_c(sig, x)
    ref = float(oracles.walk_c(list(sig.diag), list(x)))
    assert v > 0
    assert abs(v - ref) <= 1e-10 * ref + 2 * b


@given(sigma_and_point())
def test_walk_c_even(sx):
    sig, x = sx
    assert walk_c(sig, x)[0] == walk_c(sig, -x)[0]


@given(st.integers(5, 7).flatmap(lambda d: sigma_and_point(d)), st.floats(1e-6, 1e-3))
def test_tail_bound_soundness(sx, tol):
    sig, x = sx
    cut, bound = walk_c(sig, x, rel_tol=tol, tail="truncate")
    full, full_bound = walk_c(sig, x)
    assert 0 <= full - cut <= bound * (1 + 1e-9) + full_bound


@given(sigma_and_point())
def test_euler_maclaurin_bound_sound(sx):
    sig, x = sx
    v, b = walk_c(sig, x)
    ref = float(oracles.walk_c(list(sig.diag), list(x)))
    assert abs(v - ref) <= b + 1e-13 * ref


@given(st.integers(3, 6), st.floats(0.5, 30.0), st.data())
def test_depends_only_on_quadratic_form(d, radius, data):
    sig = DiagonalCovariance([data.draw(variance) for _ in range(d)])
    # two points with the same x . Sigma^-1 x along different axes
    x1 = np.zeros(d)
    x2 = np.zeros(d)
    x1[0] = radius * math.sqrt(sig.diag[0])
    x2[-1] = radius * math.sqrt(sig.diag[-1])
    v1, v2 = walk_c(sig, x1)[0], walk_c(sig, x2)[0]
    assert v1 == pytest.approx(v2, rel=1e-12)


def test_rel_tol_unreachable_is_reported():
    with pytest.raises(ValueError, match="unreachable"):
        walk_c(DiagonalCovariance.identity(3), np.zeros(3), rel_tol=1e-30, tail="truncate")


# ------------------------------------------------------------- asymptotics
@pytest.mark.parametrize("d", [3, 4, 5, 6, 7])
def test_a_d_matches_oracle(d):
    assert a_d(d) == pytest.approx(float(oracles.a_d(d)), rel=1e-14)


def test_a_d_closed_forms():
    assert a_d(3) == pytest.approx(0.15915494309189535, rel=1e-15)
    assert a_d(4) == pytest.approx(0.05066059182116889, rel=1e-15)


def test_asymptotic_anisotropic_ratio():
    sig = DiagonalCovariance([1, 1, 1, 1, 4])
    e1, e5 = np.eye(5)[0] * 7.0, np.eye(5)[4] * 7.0
    assert walk_c_asymptotic(sig, e5) / walk_c_asymptotic(sig, e1) == pytest.approx(8.0, rel=1e-14)


def test_asymptotic_rejects_origin():
    with pytest.raises(ValueError):
        walk_c_asymptotic(DiagonalCovariance.identity(3), np.zeros(3))


@pytest.mark.parametrize("d", [3, 5])
@pytest.mark.parametrize("diag_last", [1.0, 4.0])
def test_asymptotic_error_exponent(d, diag_last):
    sig = DiagonalCovariance([1.0] * (d - 1) + [diag_last])
    e = np.ones(d) / math.sqrt(d)
    r = np.geomspace(5, 50, 12)
    err = np.abs(walk_c_correction(sig, r[:, None] * e[None, :]))
    scaled = err * r ** (d + 2)
    assert np.all(np.isfinite(scaled)) and scaled.max() < 1.0
    slope = np.polyfit(np.log(r), np.log(err), 1)[0]
    assert slope <= -(d + 1.5)


@given(sigma_and_point(r_max=6.0))
def test_correction_matches_direct_difference(sx):
    sig, x = sx
    if sig.quad_form(x) < 1.0:
        x = x + 1.0 * np.sqrt(sig.diag)
    direct = float(oracles.walk_c(list(sig.diag), list(x))) - walk_c_asymptotic(sig, x)
    corr = walk_c_correction(sig, x)
    assert corr == pytest.approx(direct, rel=1e-7, abs=1e-15 * walk_c(sig, x)[0])


def test_first_step_absorbed():
    sig = DiagonalCovariance.identity(3)
    r = np.array([5.0, 10.0, 20.0, 40.0])
    x = r[:, None] * np.eye(3)[0][None, :]
    assert np.all(step_density(sig, x) * r ** 5 < [1e-2, 1e-15, 1e-80, 1e-300])


# ------------------------------------------------------------------- C_phi
def test_c_phi_includes_first_step():
    x = np.array([[1.0, 0, 0, 0, 0]])
    v, _ = c_phi(x)
    c, _ = walk_c(DiagonalCovariance.identity(5), x)
    assert v[0] == pytest.approx(c[0] + step_density(DiagonalCovariance.identity(5), x)[0],
                                 rel=1e-13)


def test_c_phi_asymptotics():
    r = np.linspace(10, 40, 7)
    x = r[:, None] * np.eye(5)[0][None, :]
    v, _ = c_phi(x)
    assert np.all(np.abs(v * r ** 3 / a_d(5) - 1) <= 0.02)


# ------------------------------------------------------------ recurrence
def test_recurrence_residual_origin_d3():
    sig = DiagonalCovariance.identity(3)
    res = walk_c_recurrence_residual(sig, np.zeros(3))
    assert res <= 1e-4 * walk_c(sig, np.zeros(3))[0]


def test_recurrence_residual_d5():
    sig = DiagonalCovariance.identity(5)
    x = np.array([3.0, 0, 0, 0, 0])
    assert walk_c_recurrence_residual(sig, x) <= 1e-3 * walk_c(sig, x)[0]


def test_recurrence_residual_anisotropic():
    sig = DiagonalCovariance([1.0, 2.0, 0.5])
    x = np.array([1.0, -2.0, 0.5])
    assert walk_c_recurrence_residual(sig, x) <= 1e-6 * walk_c(sig, x)[0]


def test_recurrence_residual_loose_tolerance_bounded_by_tails():
    sig = DiagonalCovariance.identity(3)
    x = np.zeros(3)
    v, b, _ = WalkTwoPoint(sig, rel_tol=1.0, tail="truncate").evaluate(x)
    res = walk_c_recurrence_residual(sig, x, rel_tol=1.0, tail="truncate")
    assert res <= 2 * b + 1e-6 * v

"""Rotation matrix coefficients against classical identities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fd_gradient, fd_second
from lkspin.wigner import (
    WignerIndex,
    half_angle_tables,
    monomial_table,
    synthesis_matrices,
    wigner_D,
    wigner_d,
    wigner_d_from_tables,
    wigner_d_matrix,
    wigner_d_theta_derivs,
)

THETAS = np.linspace(0.05, np.pi - 0.05, 9)


def test_special_values():
    # d^1_{1,1} = cos^2(theta/2), d^1_{0,0} = cos(theta), d^2_{0,0} = P_2(cos)
    th = THETAS
    np.testing.assert_allclose(wigner_d(WignerIndex(1, 1, 1), th), np.cos(th / 2) ** 2, atol=1e-14)
    np.testing.assert_allclose(wigner_d(WignerIndex(1, 0, 0), th), np.cos(th), atol=1e-14)
    p2 = 0.5 * (3.0 * np.cos(th) ** 2 - 1.0)
    np.testing.assert_allclose(wigner_d(WignerIndex(2, 0, 0), th), p2, atol=1e-14)
    assert wigner_d(WignerIndex(1, 1, 1), np.pi / 2) == pytest.approx(0.5, abs=1e-15)


def test_identity_at_zero():
    for l in (0, 1, 2, 5):
        mat = wigner_d_matrix(l, np.array([0.0]))[..., 0]
        np.testing.assert_allclose(mat, np.eye(2 * l + 1), atol=1e-13)


def test_symmetries():
    for l, m, n in ((2, 1, -1), (3, 2, 0), (4, -3, 2)):
        a = wigner_d(WignerIndex(l, m, n), THETAS)
        b = wigner_d(WignerIndex(l, n, m), THETAS)
        c = wigner_d(WignerIndex(l, -n, -m), THETAS)
        np.testing.assert_allclose(a, (-1.0) ** (m - n) * b, atol=1e-13)
        np.testing.assert_allclose(a, c, atol=1e-13)


def test_orthogonality():
    # int_0^pi d^l_{m,n} d^l'_{m,n} sin(theta) dtheta = 2/(2l+1) delta_{ll'}
    from scipy.integrate import quad

    m, n = 1, 0
    for l, lp in ((1, 1), (2, 2), (1, 2), (2, 3)):
        val, _ = quad(
            lambda th: wigner_d(WignerIndex(l, m, n), th)
            * wigner_d(WignerIndex(lp, m, n), th)
            * np.sin(th),
            0.0,
            np.pi,
            epsabs=1e-12,
        )
        expect = 2.0 / (2 * l + 1) if l == lp else 0.0
        assert val == pytest.approx(expect, abs=1e-10)


def test_derivatives_match_finite_differences():
    for l, m, n in ((1, 1, 1), (3, 2, -1), (5, -4, 2)):
        idx = WignerIndex(l, m, n)
        for th in (0.3, 1.2, 2.7):
            d1 = wigner_d_theta_derivs(idx, th, 1)
            d2 = wigner_d_theta_derivs(idx, th, 2)
            assert d1 == pytest.approx(fd_gradient(lambda t: wigner_d(idx, t), th), abs=1e-8)
            assert d2 == pytest.approx(fd_second(lambda t: wigner_d(idx, t), th), abs=1e-6)


def test_second_derivative_special_value():
    # d^2/dtheta^2 of d^2_{2,2} = cos^4(theta/2) at theta=0 is -1
    assert wigner_d_theta_derivs(WignerIndex(2, 2, 2), 0.0, 2) == pytest.approx(-1.0, abs=1e-14)


def test_table_route_matches_direct():
    l_max = 6
    th = THETAS
    cp, sp = half_angle_tables(th, l_max)
    for l in range(l_max + 1):
        for m in range(-l, l + 1):
            idx = WignerIndex(l, m, 2) if l >= 2 else WignerIndex(l, m, 0)
            for order in (0, 1, 2):
                got = wigner_d_from_tables(idx, cp, sp, order=order)
                want = (
                    wigner_d(idx, th)
                    if order == 0
                    else wigner_d_theta_derivs(idx, th, order)
                )
                np.testing.assert_allclose(got, want, atol=1e-12)


def test_synthesis_matrices_match_direct():
    s = 2
    th = THETAS
    for l in (2, 4, 7):
        mono = monomial_table(th, l)
        m0, m1, m2 = synthesis_matrices(l, s)
        v0 = mono @ m0.T
        v1 = mono @ m1.T
        v2 = mono @ m2.T
        for m in range(-l, l + 1):
            idx = WignerIndex(l, m, s)
            np.testing.assert_allclose(v0[:, m + l], wigner_d(idx, th), atol=1e-12)
            np.testing.assert_allclose(v1[:, m + l], wigner_d_theta_derivs(idx, th, 1), atol=1e-12)
            np.testing.assert_allclose(v2[:, m + l], wigner_d_theta_derivs(idx, th, 2), atol=1e-11)


def test_full_matrix_is_orthogonal():
    for l in (1, 2, 3):
        mat = wigner_d_matrix(l, np.array([1.1]))[..., 0]
        np.testing.assert_allclose(mat @ mat.T, np.eye(2 * l + 1), atol=1e-12)


def test_wigner_D_composition():
    # D is a homomorphism along the psi axis: extra right rotation adds phase
    idx = WignerIndex(3, 1, 2)
    base = wigner_D(idx, (0.4, 1.1, 0.7))
    shifted = wigner_D(idx, (0.4, 1.1, 0.7 + 0.5))
    assert shifted == pytest.approx(base * np.exp(-1j * idx.s * 0.5), abs=1e-13)


@settings(deadline=None, max_examples=60)
@given(
    l=st.integers(min_value=0, max_value=8),
    theta=st.floats(min_value=0.0, max_value=np.pi, allow_nan=False),
    data=st.data(),
)
def test_elements_bounded_by_one(l, theta, data):
    m = data.draw(st.integers(min_value=-l, max_value=l))
    n = data.draw(st.integers(min_value=-l, max_value=l))
    assert abs(wigner_d(WignerIndex(l, m, n), theta)) <= 1.0 + 1e-12


@settings(deadline=None, max_examples=40)
@given(
    l=st.integers(min_value=0, max_value=6),
    theta=st.floats(min_value=0.01, max_value=np.pi - 0.01, allow_nan=False),
)
def test_rows_are_unit_vectors(l, theta):
    mat = wigner_d_matrix(l, np.array([theta]))[..., 0]
    np.testing.assert_allclose((mat * mat).sum(axis=1), np.ones(2 * l + 1), atol=1e-11)

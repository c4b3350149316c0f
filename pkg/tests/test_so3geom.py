"""Left-invariant metric geometry: closed forms vs identities and FD oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lkspin import so3geom as sg

THETAS = np.linspace(0.15, np.pi - 0.15, 7)
METRICS = [sg.LeftInvariantMetric(xi, s) for xi in (1.0, 2.0, 3.0) for s in (1.0, 2.0)]

metric_st = st.builds(
    sg.LeftInvariantMetric,
    st.floats(min_value=0.5, max_value=5.0),
    st.floats(min_value=0.5, max_value=5.0),
)
theta_st = st.floats(min_value=0.1, max_value=np.pi - 0.1)


def test_parameter_validation():
    with pytest.raises(ValueError):
        sg.LeftInvariantMetric(0.0, 1.0)
    with pytest.raises(ValueError):
        sg.LeftInvariantMetric(1.0, 0.0)
    with pytest.raises(ValueError):
        sg.gram_inverse(sg.STANDARD, 0.0)


def test_gram_inverse_is_inverse():
    for m in METRICS:
        g = sg.gram(m, THETAS)
        gi = sg.gram_inverse(m, THETAS)
        np.testing.assert_allclose(g @ gi, np.broadcast_to(np.eye(3), g.shape), atol=1e-12)


def test_gram_determinant():
    for m in METRICS:
        det = np.linalg.det(sg.gram(m, THETAS))
        want = m.xi**4 * m.s**2 * np.sin(THETAS) ** 2
        np.testing.assert_allclose(det, want, rtol=1e-12)
        np.testing.assert_allclose(np.sqrt(det), sg.volume_element(m, THETAS), rtol=1e-12)


def test_christoffel_metric_compatibility():
    # d_c g_{ab} = Gamma^d_{ca} g_{db} + Gamma^d_{cb} g_{ad}; only c = theta
    # has a nonzero left side (the metric depends on theta alone).
    h = 1e-6
    for m in METRICS:
        for th in (0.4, 1.3, 2.6):
            dg = (sg.gram(m, th + h) - sg.gram(m, th - h)) / (2.0 * h)
            chr_ = sg.christoffel(m, th)
            g = sg.gram(m, th)
            for c in range(3):
                rhs = np.einsum("dA,dB->AB", chr_[:, c, :], g)
                rhs = rhs + rhs.T
                lhs = dg if c == 1 else np.zeros((3, 3))
                np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_christoffel_theta_derivative_matches_fd():
    h = 1e-5
    for m in METRICS:
        for th in (0.5, 1.1, 2.2):
            fd = (sg.christoffel(m, th + h) - sg.christoffel(m, th - h)) / (2.0 * h)
            np.testing.assert_allclose(sg.christoffel_theta_derivative(m, th), fd, atol=1e-6)


def test_riemann_lowering_cross_check():
    for m in METRICS:
        for th in (0.4, 1.5, 2.8):
            np.testing.assert_allclose(
                sg.lower_riemann13(m, th), sg.riemann04(m, th), atol=1e-12
            )


def test_riemann_pair_matrix_symmetry():
    for m in METRICS:
        pm = sg.riemann04(m, 1.234)
        np.testing.assert_allclose(pm, pm.T, atol=1e-14)


def test_scalar_curvature_from_contraction():
    for m in METRICS:
        want = sg.scalar_curvature(m)
        for th in THETAS:
            full = sg.riemann04_full(m, th)
            gi = sg.gram_inverse(m, th)
            got = -np.einsum("ik,jl,ijkl->", gi, gi, full)
            assert got == pytest.approx(want, abs=1e-10)


def test_standard_metric_values():
    assert sg.scalar_curvature(sg.STANDARD) == pytest.approx(1.5, abs=1e-12)
    l0, l1, l2, l3 = sg.lk_so3(sg.STANDARD)
    assert l0 == 0.0
    assert l1 == pytest.approx(3.0 * np.pi, abs=1e-12)
    assert l2 == 0.0
    assert l3 == pytest.approx(8.0 * np.pi**2, abs=1e-12)
    # constant curvature 1/4: the round sphere of radius 2, quotiented
    for plane in ((1, 2), (1, 3), (2, 3)):
        assert sg.sectional(sg.STANDARD, 0.9, plane) == pytest.approx(0.25, abs=1e-12)


def test_sectional_matches_riemann_apply():
    for m in METRICS:
        th = 1.05
        pair = sg.riemann04(m, th)
        g = sg.gram(m, th)
        for plane in ((1, 2), (1, 3), (2, 3)):
            i, j = plane[0] - 1, plane[1] - 1
            u = np.eye(3)[i]
            v = np.eye(3)[j]
            area2 = g[i, i] * g[j, j] - g[i, j] ** 2
            got = -sg.riemann_apply(pair, u, v, u, v) / area2
            assert got == pytest.approx(sg.sectional(m, th, plane), rel=1e-12)


def test_sectional_rejects_bad_plane():
    with pytest.raises(ValueError):
        sg.sectional(sg.STANDARD, 1.0, (2, 1))


def test_coordinate_tensor_accessor():
    t = sg.coordinate_tensor(sg.STANDARD, 1.0, "Gram")
    assert t.kind == "Gram"
    np.testing.assert_allclose(t.components, sg.gram(sg.STANDARD, 1.0))
    with pytest.raises(ValueError):
        sg.coordinate_tensor(sg.STANDARD, 1.0, "Torsion")


@settings(deadline=None, max_examples=50)
@given(metric=metric_st, theta=theta_st)
def test_gram_positive_definite(metric, theta):
    eigs = np.linalg.eigvalsh(sg.gram(metric, theta))
    assert eigs.min() > 0.0


@settings(deadline=None, max_examples=50)
@given(metric=metric_st, theta=theta_st)
def test_lowering_property(metric, theta):
    np.testing.assert_allclose(
        sg.lower_riemann13(metric, theta), sg.riemann04(metric, theta), atol=1e-9
    )

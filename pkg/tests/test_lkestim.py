"""Geometric estimators on the Euler-angle grid: volumes, meshes, curvature
integrals, and Morse counting, checked against a deterministic fixture with
known excursion geometry and against each other on random fields."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lkspin import so3geom
from lkspin.lkestim import (
    VOL_SO3,
    CosThetaField,
    LKVector,
    UnreliableEstimateError,
    _nudged_threshold,
    _periodic_delta,
    build_grid,
    estimate_L0_gaussbonnet,
    estimate_L0_morse,
    estimate_L1,
    estimate_L2,
    estimate_L2_crossings,
    estimate_L3,
    extract_level_surface,
    morse_critical_points,
    report,
)
from lkspin.spinfield import SpectrumSpec, sample


@pytest.fixture(scope="module")
def cos_grid():
    return build_grid(CosThetaField(), 48)


@pytest.fixture(scope="module")
def rand_grid():
    return build_grid(sample(SpectrumSpec.power_law(1, 1, 3), 7), 32)


# ---------------------------------------------------------------------------
# containers and grid basics
# ---------------------------------------------------------------------------


def test_lk_vector_validation():
    v = LKVector(l0=-2.0, l1=5.0, l2=10.0, l3=30.0)
    assert v.as_array().tolist() == [-2.0, 5.0, 10.0, 30.0]
    with pytest.raises(ValueError):
        LKVector(l0=0.0, l1=0.0, l2=0.0, l3=-1.0)
    with pytest.raises(ValueError):
        LKVector(l0=0.0, l1=0.0, l2=0.0, l3=VOL_SO3 + 1.0)
    with pytest.raises(ValueError):
        LKVector(l0=0.0, l1=0.0, l2=-1.0, l3=1.0)
    # a tighter volume bound is honored
    with pytest.raises(ValueError):
        LKVector(l0=0.0, l1=0.0, l2=0.0, l3=5.0, volume_bound=4.0)


def test_minimum_resolution():
    with pytest.raises(ValueError):
        build_grid(CosThetaField(), 7)


def test_full_volume_is_exact(rand_grid):
    # row weights are rescaled so the whole-grid sum is the group volume
    assert estimate_L3(rand_grid, -10.0) == pytest.approx(VOL_SO3, abs=1e-12)
    assert estimate_L3(rand_grid, 10.0) == 0.0


def test_volume_complementarity(rand_grid):
    below = (rand_grid.f < 0.3).sum(axis=(0, 2)) @ rand_grid.row_weights
    assert estimate_L3(rand_grid, 0.3) + below == pytest.approx(VOL_SO3, abs=1e-12)


# ---------------------------------------------------------------------------
# deterministic fixture: the solid torus {theta <= arccos u}
# ---------------------------------------------------------------------------


def test_costheta_symmetric_threshold_is_exact(cos_grid):
    # u = 0 puts the boundary exactly between two theta rows and at the
    # mirror symmetry of sin(theta), so every estimate collapses to its
    # analytic value up to rounding.
    mesh = extract_level_surface(cos_grid, 0.0)
    assert estimate_L3(cos_grid, 0.0) == pytest.approx(4.0 * math.pi**2, rel=1e-12)
    assert estimate_L2(cos_grid, 0.0, mesh) == pytest.approx(2.0 * math.pi**2, rel=1e-12)
    assert estimate_L1(cos_grid, 0.0, mesh) == pytest.approx(1.5 * math.pi, rel=1e-12)
    assert abs(estimate_L0_gaussbonnet(cos_grid, 0.0, mesh)) < 1e-12


def test_costheta_generic_threshold(cos_grid):
    u = 0.4
    theta0 = math.acos(u)
    mesh = extract_level_surface(cos_grid, u)
    # volume is row-quantized (first-order in the grid step), the rest is not
    assert estimate_L3(cos_grid, u) == pytest.approx(4.0 * math.pi**2 * (1 - u), rel=0.05)
    assert estimate_L2(cos_grid, u, mesh) == pytest.approx(
        2.0 * math.pi**2 * math.sin(theta0), rel=1e-3
    )
    l1 = 2.0 * math.pi * u + 1.5 * math.pi * (1 - u)
    assert estimate_L1(cos_grid, u, mesh) == pytest.approx(l1, rel=0.04)
    # the boundary torus is intrinsically flat
    assert abs(estimate_L0_gaussbonnet(cos_grid, u, mesh)) < 1e-10


def test_costheta_has_no_critical_points(cos_grid):
    pts, values, indices, unresolved = morse_critical_points(cos_grid)
    assert len(pts) == 0
    assert unresolved == 0
    assert estimate_L0_morse(cos_grid, 0.3) == 0.0


def test_costheta_mesh_orientation(cos_grid):
    # f = cos(theta) decreases with theta, so the chart normal of every
    # triangle (pointing toward {f < u}) has positive theta component
    mesh = extract_level_surface(cos_grid, 0.25)
    t = mesh.triangles
    normal = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    assert np.all(normal[:, 1] > 0)


def test_crossing_estimator_needs_spin_field(cos_grid):
    with pytest.raises(ValueError):
        estimate_L2_crossings(cos_grid, 0.0)


# ---------------------------------------------------------------------------
# random field: internal consistency
# ---------------------------------------------------------------------------


def test_mesh_is_combinatorially_closed(rand_grid):
    for u in (0.0, 0.5):
        mesh = extract_level_surface(rand_grid, u)
        assert len(mesh.triangles) > 0
        assert mesh.boundary_edge_count() == 0


def test_mesh_triangle_orientation(rand_grid):
    mesh = extract_level_surface(rand_grid, 0.0)
    t = mesh.triangles
    normal = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    c = mesh.centroids
    d = rand_grid.field.eval_many(c[:, 0], c[:, 1], c[:, 2], order=1)
    grad = np.stack([d["fp"], d["ft"], d["fs"]], axis=-1)
    assert np.all(np.einsum("ti,ti->t", normal, grad) < 0)


def test_vertex_normals_unit_and_outward(rand_grid):
    mesh = extract_level_surface(rand_grid, 0.0)
    keys, pts, normals = mesh.vertex_normals()
    assert keys.shape == (len(pts), 2)
    gram = so3geom.gram(rand_grid.metric, pts[:, 1])
    norm2 = np.einsum("ti,tij,tj->t", normals, gram, normals)
    assert np.allclose(norm2, 1.0, atol=1e-10)
    # the normal is the raised gradient: f increases along it
    eps = 1e-6
    f0 = rand_grid.field.eval_many(pts[:, 0], pts[:, 1], pts[:, 2])["f"]
    q = pts + eps * normals
    f1 = rand_grid.field.eval_many(q[:, 0], q[:, 1], q[:, 2])["f"]
    assert np.all(f1 > f0)


def test_l2_routes_agree(rand_grid):
    for u in (0.0, 0.5):
        mesh_route = estimate_L2(rand_grid, u)
        crossing_route = estimate_L2_crossings(rand_grid, u)
        assert mesh_route == pytest.approx(crossing_route, rel=0.06)


def test_morse_full_space_euler_characteristic(rand_grid):
    pts, values, indices, unresolved = morse_critical_points(rand_grid)
    assert len(pts) > 0
    assert unresolved == 0
    assert set(np.unique(indices)) <= {0, 1, 2, 3}
    # the alternating sum over all critical points is chi of the group: 0
    assert estimate_L0_morse(rand_grid, -10.0) == 0.0


def test_morse_counts_are_integers(rand_grid):
    for u in (-0.5, 0.0, 0.5, 1.0):
        chi = estimate_L0_morse(rand_grid, u)
        assert chi == round(chi)


def test_l0_routes_agree(rand_grid):
    for u in (0.0, 0.5):
        gb = estimate_L0_gaussbonnet(rand_grid, u)
        morse = estimate_L0_morse(rand_grid, u)
        assert abs(gb - morse) < 0.3


def test_empty_excursion_set(rand_grid):
    u = float(rand_grid.f.max()) + 1.0
    mesh = extract_level_surface(rand_grid, u)
    assert len(mesh.triangles) == 0
    assert mesh.total_area() == 0.0
    assert estimate_L3(rand_grid, u) == 0.0
    assert estimate_L2(rand_grid, u, mesh) == 0.0
    assert estimate_L1(rand_grid, u, mesh) == 0.0
    assert estimate_L0_gaussbonnet(rand_grid, u, mesh) == 0.0
    assert estimate_L0_morse(rand_grid, u) == 0.0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def test_report_contents(rand_grid):
    rep = report(rand_grid, 0.5)
    assert set(rep) == {"u", "L0_gb", "L0_morse", "L1", "L2", "L3", "skipped_area_fraction"}
    assert rep["u"] == 0.5
    assert rep["L0_gb"] == estimate_L0_gaussbonnet(rand_grid, 0.5)
    assert rep["L0_morse"] == estimate_L0_morse(rand_grid, 0.5)
    assert rep["L3"] == estimate_L3(rand_grid, 0.5)
    assert 0.0 <= rep["skipped_area_fraction"] <= 1.0


def test_report_method_selection(rand_grid):
    gb_only = report(rand_grid, 0.5, l0_method="gb")
    assert gb_only["L0_morse"] is None and gb_only["L0_gb"] is not None
    morse_only = report(rand_grid, 0.5, l0_method="morse")
    assert morse_only["L0_gb"] is None and morse_only["L0_morse"] is not None
    crossings = report(rand_grid, 0.5, l2_method="crossings")
    assert crossings["L2"] == estimate_L2_crossings(rand_grid, 0.5)
    with pytest.raises(ValueError):
        report(rand_grid, 0.5, l2_method="nope")
    with pytest.raises(ValueError):
        report(rand_grid, 0.5, l0_method="nope")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def test_periodic_delta_wraps_phi_and_psi_only():
    x = np.array([[2.0 * np.pi - 0.1, 1.0, 0.05]])
    y = np.array([[0.1, 1.2, 2.0 * np.pi - 0.05]])
    d = _periodic_delta(x.copy(), y)
    assert d[0] == pytest.approx([-0.2, -0.2, 0.1], abs=1e-12)


def test_nudged_threshold():
    f = np.array([0.1, 0.5, 0.9])
    assert _nudged_threshold(f, 0.5) > 0.5
    assert _nudged_threshold(f, 0.3) == 0.3


@settings(max_examples=25, deadline=None)
@given(
    u1=st.floats(min_value=-0.99, max_value=0.99),
    u2=st.floats(min_value=-0.99, max_value=0.99),
)
def test_volume_estimate_is_monotone(u1, u2):
    grid = _small_cos_grid()
    lo, hi = sorted((u1, u2))
    assert estimate_L3(grid, lo) >= estimate_L3(grid, hi)


_SMALL_COS_GRID = None


def _small_cos_grid():
    global _SMALL_COS_GRID
    if _SMALL_COS_GRID is None:
        _SMALL_COS_GRID = build_grid(CosThetaField(), 16)
    return _SMALL_COS_GRID

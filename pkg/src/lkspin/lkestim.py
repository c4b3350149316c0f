"""Geometric estimators for the Lipschitz-Killing curvatures of excursion sets.

Everything here measures with respect to a reference left-invariant metric
(default: the standard bi-invariant one, total volume 8 pi^2) on a periodic
Euler-angle grid.  phi and psi wrap; theta nodes sit at cell midpoints
(j + 1/2) pi / n, so the polar caps theta < pi/(2n) and theta > pi - pi/(2n)
are not covered.  Their reference volume fraction is about (pi/(4n))^2,
negligible at the resolutions used, but it means extracted surfaces may be
open along the two boundary theta planes and critical points inside the caps
are invisible to the Morse scan.

Estimators:
  L3     volume:       sum of node weights over {f >= u} (weights normalized
                       so the full-grid sum is exactly the group volume);
  L2     surface area: half the area of a marching-tetrahedra level surface,
                       or a crossing-count integral along psi lines that uses
                       the exact one-dimensional form f = |W| cos(s psi - a);
  L1     mean curvature integral plus the scalar-curvature volume term;
  L0     Euler characteristic, via surface Gauss-Bonnet or via Morse counting
                       of critical points refined by Newton iteration.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import so3geom
from .so3geom import STANDARD

VOL_SO3 = 8.0 * np.pi**2

#: tetrahedral decomposition of the unit cell; corner label = di + 2 dj + 4 dk
KUHN_TETS = ((0, 1, 3, 7), (0, 3, 2, 7), (0, 2, 6, 7), (0, 6, 4, 7), (0, 4, 5, 7), (0, 5, 1, 7))

#: fraction of reference area allowed to fail the gradient floor before a
#: curvature estimate is declared unreliable
SKIP_AREA_LIMIT = 1e-4

GRAD_FLOOR = 1e-8


class UnreliableEstimateError(RuntimeError):
    """An estimate had to drop too much of the data to be trusted."""


class DegeneratePointError(RuntimeError):
    """A critical point with a (numerically) singular Hessian was found."""


@dataclass(frozen=True)
class LKVector:
    """The four curvatures (L0, L1, L2, L3) of one excursion set."""

    l0: float
    l1: float
    l2: float
    l3: float
    volume_bound: float = dataclass_field(default=VOL_SO3, repr=False, compare=False)

    def __post_init__(self):
        tol = 1e-9 * (1.0 + self.volume_bound)
        if not -tol <= self.l3 <= self.volume_bound + tol:
            raise ValueError(f"L3={self.l3} outside [0, {self.volume_bound}]")
        if not self.l2 >= -tol:
            raise ValueError(f"L2={self.l2} must be nonnegative")

    def as_array(self):
        return np.array([self.l0, self.l1, self.l2, self.l3])


class CosThetaField:
    """Deterministic fixture f = cos(theta).

    Its excursion set {f >= u} is the solid torus {theta <= arccos u} with
    volume 4 pi^2 (1 - u), boundary area 4 pi^2 sin(theta_0), constant mean
    out-curvature -cot(theta_0)/2, flat boundary (kappa = 0), and Euler
    characteristic 0 -- all in the standard metric.
    """

    def grad_scale(self):
        return 1.0

    @staticmethod
    def _fill(shape, theta, order):
        z = np.zeros(shape)
        out = {"f": np.cos(theta) * np.ones(shape)}
        if order >= 1:
            out["fp"] = z.copy()
            out["ft"] = -np.sin(theta) * np.ones(shape)
            out["fs"] = z.copy()
        if order >= 2:
            for k in ("fpp", "fpt", "fps", "fts", "fss"):
                out[k] = z.copy()
            out["ftt"] = -np.cos(theta) * np.ones(shape)
        return out

    def eval_many(self, phi, theta, psi, order=0):
        phi = np.asarray(phi, dtype=float)
        theta = np.asarray(theta, dtype=float)
        psi = np.asarray(psi, dtype=float)
        shape = np.broadcast(phi, theta, psi).shape
        return self._fill(shape, theta, order)

    def eval_grid(self, phis, thetas, psis, order=0):
        shape = (len(phis), len(thetas), len(psis))
        return self._fill(shape, np.asarray(thetas, dtype=float)[None, :, None], order)


class EulerGrid:
    """Periodic evaluation grid with precomputed field values and gradient.

    Nodes: phi_i = 2 pi i / n, theta_j = (j + 1/2) pi / n, psi_k = 2 pi k / n.
    Node weights are sin(theta_j) cell volumes rescaled so that the full-grid
    sum equals the reference group volume exactly; hence the L3 estimate of
    the whole group is exact and {f >= u} and {f < u} volumes are exactly
    complementary.
    """

    def __init__(self, field, resolution, metric=STANDARD):
        if resolution < 8:
            raise ValueError(f"resolution must be at least 8, got {resolution}")
        n = int(resolution)
        self.field = field
        self.resolution = n
        self.metric = metric
        self.dphi = 2.0 * np.pi / n
        self.dtheta = np.pi / n
        self.dpsi = 2.0 * np.pi / n
        self.phis = np.arange(n) * self.dphi
        self.thetas = (np.arange(n) + 0.5) * self.dtheta
        self.psis = np.arange(n) * self.dpsi
        raw = np.sin(self.thetas)  # relative row weight, same for every (phi, psi)
        volume = 8.0 * np.pi**2 * metric.xi**2 * abs(metric.s)
        self.row_weights = raw * (volume / (raw.sum() * n * n))
        data = field.eval_grid(self.phis, self.thetas, self.psis, order=1)
        self.f = data["f"]
        self.fp = data["fp"]
        self.ft = data["ft"]
        self.fs = data["fs"]
        self.grad_scale = field.grad_scale()
        self._criticals = None  # (points, values, indices, unresolved) cache

    def node_count(self):
        return self.resolution**3


def build_grid(field, resolution, metric=STANDARD) -> EulerGrid:
    return EulerGrid(field, resolution, metric)


def estimate_L3(grid: EulerGrid, u) -> float:
    """Reference volume of {f >= u}: sum of weights of super-level nodes."""
    counts = (grid.f >= u).sum(axis=(0, 2))
    return float(counts @ grid.row_weights)


# ---------------------------------------------------------------------------
# level-surface extraction (marching tetrahedra)
# ---------------------------------------------------------------------------


class LevelSurfaceMesh:
    """Triangulated level surface {f = u} in chart coordinates.

    triangles: (T, 3, 3) vertex coordinates (phi, theta, psi), cell-local
    (not wrapped), oriented so the chart normal of each triangle points
    toward {f < u}.  vertex_keys: (T, 3, 2) sorted global node-id pairs of
    the grid edge carrying each vertex; shared vertices have identical keys,
    making adjacency exact.  areas are measured with the reference metric's
    Gram matrix at each triangle centroid.
    """

    def __init__(self, field, u, metric, triangles, vertex_keys, grid_shape):
        self.field = field
        self.u = u
        self.metric = metric
        self.triangles = triangles
        self.vertex_keys = vertex_keys
        self.grid_shape = grid_shape
        t = triangles
        self.centroids = t.mean(axis=1)
        e1 = t[:, 1] - t[:, 0]
        e2 = t[:, 2] - t[:, 0]
        g = so3geom.gram(metric, self.centroids[:, 1]) if len(t) else np.zeros((0, 3, 3))
        g11 = np.einsum("ti,tij,tj->t", e1, g, e1)
        g22 = np.einsum("ti,tij,tj->t", e2, g, e2)
        g12 = np.einsum("ti,tij,tj->t", e1, g, e2)
        self.areas = 0.5 * np.sqrt(np.clip(g11 * g22 - g12 * g12, 0.0, None))
        self._centroid_data = None
        self._vertex_normal_cache = None

    def total_area(self):
        return float(self.areas.sum())

    # -- lazy per-centroid field derivatives (order 2) ---------------------

    def centroid_data(self):
        if self._centroid_data is None:
            c = self.centroids
            self._centroid_data = self.field.eval_many(c[:, 0], c[:, 1], c[:, 2], order=2)
        return self._centroid_data

    def _centroid_geometry(self):
        """Gradient, Riemannian Hessian, metric norms at the centroids."""
        d = self.centroid_data()
        grad = np.stack([d["fp"], d["ft"], d["fs"]], axis=-1)
        hess = np.empty(grad.shape + (3,))
        hess[:, 0, 0] = d["fpp"]
        hess[:, 0, 1] = hess[:, 1, 0] = d["fpt"]
        hess[:, 0, 2] = hess[:, 2, 0] = d["fps"]
        hess[:, 1, 1] = d["ftt"]
        hess[:, 1, 2] = hess[:, 2, 1] = d["fts"]
        hess[:, 2, 2] = d["fss"]
        th = self.centroids[:, 1]
        gam = so3geom.christoffel(self.metric, th)
        hess = hess - np.einsum("tk,tkij->tij", grad, gam)
        ginv = so3geom.gram_inverse(self.metric, th)
        grad_up = np.einsum("tij,tj->ti", ginv, grad)
        gnorm = np.sqrt(np.maximum(np.einsum("ti,ti->t", grad, grad_up), 0.0))
        return grad, grad_up, gnorm, hess, ginv

    # -- diagnostics ---------------------------------------------------------

    def vertex_normals(self):
        """Unit (reference-metric) normals at the distinct mesh vertices.

        Returns (keys (V, 2), coords (V, 3), normals (V, 3)); each normal is
        the raised gradient normalized to unit metric length.
        """
        if self._vertex_normal_cache is not None:
            return self._vertex_normal_cache
        flat_keys = self.vertex_keys.reshape(-1, 2)
        flat_pts = self.triangles.reshape(-1, 3)
        _, first = np.unique(flat_keys[:, 0] << 32 | flat_keys[:, 1], return_index=True)
        keys = flat_keys[first]
        pts = flat_pts[first]
        d = self.field.eval_many(pts[:, 0], pts[:, 1], pts[:, 2], order=1)
        grad = np.stack([d["fp"], d["ft"], d["fs"]], axis=-1)
        ginv = so3geom.gram_inverse(self.metric, pts[:, 1])
        up = np.einsum("tij,tj->ti", ginv, grad)
        gnorm = np.sqrt(np.maximum(np.einsum("ti,ti->t", grad, up), 1e-300))
        self._vertex_normal_cache = (keys, pts, up / gnorm[:, None])
        return self._vertex_normal_cache

    def boundary_edge_count(self):
        """Number of triangle edges not shared by exactly two triangles,
        excluding edges lying in the two theta-boundary node planes (where
        the grid legitimately truncates the surface)."""
        n = self.grid_shape[0]

        def theta_row(node_id):
            return (node_id // n) % n

        counts = {}
        for tri in self.vertex_keys:
            ids = [tuple(v) for v in tri]
            for a, b in ((0, 1), (1, 2), (2, 0)):
                e = tuple(sorted((ids[a], ids[b])))
                counts[e] = counts.get(e, 0) + 1
        bad = 0
        for (va, vb), c in counts.items():
            if c == 2:
                continue
            rows = {theta_row(va[0]), theta_row(va[1]), theta_row(vb[0]), theta_row(vb[1])}
            if rows == {0} or rows == {n - 1}:
                continue  # truncation at the uncovered polar caps
            bad += 1
        return bad

    def write_off(self, path):
        """Write the mesh in OFF format (vertices deduplicated by edge key)."""
        flat_keys = self.vertex_keys.reshape(-1, 2)
        flat_pts = self.triangles.reshape(-1, 3)
        packed = flat_keys[:, 0] << 32 | flat_keys[:, 1]
        uniq, first, inverse = np.unique(packed, return_index=True, return_inverse=True)
        verts = flat_pts[first]
        faces = inverse.reshape(-1, 3)
        with open(path, "w") as fh:
            fh.write("OFF\n")
            fh.write(f"{len(verts)} {len(faces)} 0\n")
            for v in verts:
                fh.write("%.17g %.17g %.17g\n" % tuple(v))
            for f in faces:
                fh.write("3 %d %d %d\n" % tuple(f))


def _nudged_threshold(f, u):
    """Shift u by 1e-12 steps until no grid node sits exactly on the level."""
    scale = max(1.0, abs(u))
    u_eff = u
    for _ in range(8):
        if not np.any(np.abs(f - u_eff) <= 1e-13 * scale):
            break
        u_eff += 1e-12 * scale
    return u_eff


def extract_level_surface(grid: EulerGrid, u) -> LevelSurfaceMesh:
    """Marching tetrahedra over the Kuhn subdivision of each grid cell."""
    n = grid.resolution
    f = grid.f
    u_eff = _nudged_threshold(f, u)

    corner = [(b & 1, (b >> 1) & 1, (b >> 2) & 1) for b in range(8)]
    # candidate cells: those whose value range straddles the level
    lo = np.full((n, n - 1, n), np.inf)
    hi = np.full((n, n - 1, n), -np.inf)
    for di, dj, dk in corner:
        a = np.roll(np.roll(f, -di, axis=0), -dk, axis=2)[:, dj : dj + n - 1, :]
        np.minimum(lo, a, out=lo)
        np.maximum(hi, a, out=hi)
    ci, cj, ck = np.nonzero((lo <= u_eff) & (hi > u_eff))
    if len(ci) == 0:
        return LevelSurfaceMesh(
            grid.field, u, grid.metric, np.zeros((0, 3, 3)), np.zeros((0, 3, 2), dtype=np.int64), (n, n, n)
        )

    fc = np.empty((8, len(ci)))
    gid = np.empty((8, len(ci)), dtype=np.int64)
    for b, (di, dj, dk) in enumerate(corner):
        ii = (ci + di) % n
        jj = cj + dj
        kk = (ck + dk) % n
        fc[b] = f[ii, jj, kk]
        gid[b] = (ii * n + jj) * n + kk
    inside = fc > u_eff
    # unwrapped cell-local node coordinates, bit-identical across neighbors
    coord = np.empty((8, len(ci), 3))
    for b, (di, dj, dk) in enumerate(corner):
        coord[b, :, 0] = (ci + di) * grid.dphi
        coord[b, :, 1] = (cj + dj + 0.5) * grid.dtheta
        coord[b, :, 2] = (ck + dk) * grid.dpsi

    def edge_vertex(sel, a, b):
        """Level crossing on tet edge (a, b) for the selected cells."""
        ga, gb = gid[a][sel], gid[b][sel]
        fa, fb = fc[a][sel], fc[b][sel]
        pa, pb = coord[a][sel], coord[b][sel]
        swap = ga > gb
        glo = np.where(swap, gb, ga)
        ghi = np.where(swap, ga, gb)
        flo = np.where(swap, fb, fa)
        fhi = np.where(swap, fa, fb)
        plo = np.where(swap[:, None], pb, pa)
        phi_ = np.where(swap[:, None], pa, pb)
        t = (u_eff - flo) / (fhi - flo)
        return plo + t[:, None] * (phi_ - plo), np.stack([glo, ghi], axis=-1)

    tri_pts, tri_keys = [], []

    def add(sel, e1, e2, e3):
        if not np.any(sel):
            return
        v1, k1 = edge_vertex(sel, *e1)
        v2, k2 = edge_vertex(sel, *e2)
        v3, k3 = edge_vertex(sel, *e3)
        tri_pts.append(np.stack([v1, v2, v3], axis=1))
        tri_keys.append(np.stack([k1, k2, k3], axis=1))

    for tet in KUHN_TETS:
        tin = inside[list(tet)]
        count = tin.sum(axis=0)
        # one corner on its own side: a single triangle on the edges to it
        for pos, v in enumerate(tet):
            others = [c for c in tet if c != v]
            lone_in = (count == 1) & tin[pos]
            lone_out = (count == 3) & ~tin[pos]
            for sel in (lone_in, lone_out):
                add(sel, (v, others[0]), (v, others[1]), (v, others[2]))
        # two-two split: quad spanning the four crossing edges, fanned
        for ia in range(4):
            for ib in range(ia + 1, 4):
                a, b = tet[ia], tet[ib]
                c, d = [tet[x] for x in range(4) if x not in (ia, ib)]
                sel = (count == 2) & tin[ia] & tin[ib]
                add(sel, (a, c), (a, d), (b, d))
                add(sel, (a, c), (b, d), (b, c))

    pts = np.concatenate(tri_pts, axis=0)
    keys = np.concatenate(tri_keys, axis=0)

    # orient: chart normal e1 x e2 must point toward {f < u}
    cen = pts.mean(axis=1)
    d = grid.field.eval_many(cen[:, 0], cen[:, 1], cen[:, 2], order=1)
    gradc = np.stack([d["fp"], d["ft"], d["fs"]], axis=-1)
    nrm = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
    flip = np.einsum("ti,ti->t", nrm, gradc) > 0
    pts[flip, 1], pts[flip, 2] = pts[flip, 2].copy(), pts[flip, 1].copy()
    keys[flip, 1], keys[flip, 2] = keys[flip, 2].copy(), keys[flip, 1].copy()

    return LevelSurfaceMesh(grid.field, u, grid.metric, pts, keys, (n, n, n))


# ---------------------------------------------------------------------------
# L2: area estimators
# ---------------------------------------------------------------------------


def estimate_L2(grid: EulerGrid, u, mesh: LevelSurfaceMesh = None) -> float:
    """Half the reference area of the extracted level surface."""
    if mesh is None:
        mesh = extract_level_surface(grid, u)
    return 0.5 * mesh.total_area()


def estimate_L2_crossings(grid: EulerGrid, u) -> float:
    """Area via exact level crossings along the psi coordinate lines.

    Along each line the field is exactly f(psi) = |W| cos(s psi - arg W), so
    crossing locations are closed-form; the coarea weight |grad f|_g / |df/dpsi|
    is then sampled analytically at the crossings.  Requires a spin field
    (s != 0) evaluated through its psi-line amplitudes.
    """
    field = grid.field
    if not hasattr(field, "psi_line_amplitudes"):
        raise ValueError("crossing estimator needs a spin-field realization")
    s = field.spec.s
    if s == 0:
        raise ValueError("crossing estimator requires spin s != 0")
    amp = field.psi_line_amplitudes(grid.phis, grid.thetas)
    A = np.abs(amp)
    alpha = np.angle(amp)
    ii, jj = np.nonzero(A > abs(u))
    if len(ii) == 0:
        return 0.0
    beta = np.arccos(np.clip(u / A[ii, jj], -1.0, 1.0))
    base = np.stack([(alpha[ii, jj] + beta), (alpha[ii, jj] - beta)], axis=-1)  # (M, 2)
    ks = np.arange(abs(s))
    psi = (base[:, :, None] + 2.0 * np.pi * ks) / s  # (M, 2, |s|)
    psi = np.mod(psi, 2.0 * np.pi)
    M = len(ii)
    phi_pts = np.broadcast_to(grid.phis[ii][:, None, None], psi.shape).ravel()
    th_pts = np.broadcast_to(grid.thetas[jj][:, None, None], psi.shape).ravel()
    d = field.eval_many(phi_pts, th_pts, psi.ravel(), order=1)
    grad = np.stack([d["fp"], d["ft"], d["fs"]], axis=-1)
    ginv = so3geom.gram_inverse(grid.metric, th_pts)
    gnorm = np.sqrt(np.maximum(np.einsum("ti,tij,tj->t", grad, ginv, grad), 0.0))
    dpsi_f = np.abs(d["fs"])
    ok = dpsi_f >= 1e-6 * gnorm
    if (~ok).sum() > SKIP_AREA_LIMIT * max(1, len(ok)):
        raise UnreliableEstimateError(
            f"{(~ok).sum()} of {len(ok)} psi-line crossings were near-tangent"
        )
    # line weight = node weight / dpsi (the psi integral is done exactly)
    line_w = (grid.row_weights / grid.dpsi)[jj]
    contrib = np.where(ok, gnorm / np.maximum(dpsi_f, 1e-300), 0.0).reshape(M, -1).sum(axis=1)
    return 0.5 * float(line_w @ contrib)


# ---------------------------------------------------------------------------
# L1: mean curvature
# ---------------------------------------------------------------------------


def mean_out_curvature(mesh: LevelSurfaceMesh):
    """Mean curvature of the level surface toward {f < u} at each centroid.

    H = (Tr_g Hess f - Hess f(n, n)) / (2 |grad f|_g) with n the unit normal;
    returns (H, valid mask, skipped area fraction).
    """
    grad, grad_up, gnorm, hess, ginv = mesh._centroid_geometry()
    floor = GRAD_FLOOR * mesh.field.grad_scale()
    ok = gnorm >= floor
    safe = np.maximum(gnorm, 1e-300)
    nvec = grad_up / safe[:, None]
    tr = np.einsum("tij,tij->t", ginv, hess)
    hnn = np.einsum("ti,tij,tj->t", nvec, hess, nvec)
    H = 0.5 * (tr - hnn) / safe
    total = mesh.areas.sum()
    skipped = float(mesh.areas[~ok].sum() / total) if total > 0 else 0.0
    return H, ok, skipped


def estimate_L1(grid: EulerGrid, u, mesh: LevelSurfaceMesh = None) -> float:
    """L1 = -(1/pi) * integral of H over the surface
           + (1/4pi) * integral of the ambient scalar curvature over the set."""
    if mesh is None:
        mesh = extract_level_surface(grid, u)
    if len(mesh.triangles):
        H, ok, skipped = mean_out_curvature(mesh)
        if skipped > SKIP_AREA_LIMIT:
            raise UnreliableEstimateError(
                f"skipped area fraction {skipped:.2e} exceeds {SKIP_AREA_LIMIT}"
            )
        curv = float((H[ok] * mesh.areas[ok]).sum())
    else:
        curv = 0.0
    scal = so3geom.scalar_curvature(grid.metric)
    return -curv / np.pi + scal / (4.0 * np.pi) * estimate_L3(grid, u)


# ---------------------------------------------------------------------------
# L0: Euler characteristic, two routes
# ---------------------------------------------------------------------------


def estimate_L0_gaussbonnet(grid: EulerGrid, u, mesh: LevelSurfaceMesh = None) -> float:
    """chi via Gauss-Bonnet on the boundary surface: chi(set) = (1/4pi) * int K.

    K = det(shape operator) - R(e1, e2, e1, e2) on a metric-orthonormal
    tangent frame, with the shape operator S = -Hess f / |grad f|_g restricted
    to the tangent plane.
    """
    if mesh is None:
        mesh = extract_level_surface(grid, u)
    if not len(mesh.triangles):
        return 0.0
    grad, grad_up, gnorm, hess, ginv = mesh._centroid_geometry()
    floor = GRAD_FLOOR * mesh.field.grad_scale()
    ok = gnorm >= floor
    total = mesh.areas.sum()
    skipped = float(mesh.areas[~ok].sum() / total) if total > 0 else 0.0
    if skipped > SKIP_AREA_LIMIT:
        raise UnreliableEstimateError(
            f"skipped area fraction {skipped:.2e} exceeds {SKIP_AREA_LIMIT}"
        )
    th = mesh.centroids[:, 1]
    g = so3geom.gram(mesh.metric, th)
    e1 = mesh.triangles[:, 1] - mesh.triangles[:, 0]
    e2 = mesh.triangles[:, 2] - mesh.triangles[:, 0]
    # Gram-Schmidt in the reference metric
    n1 = np.sqrt(np.maximum(np.einsum("ti,tij,tj->t", e1, g, e1), 1e-300))
    e1 = e1 / n1[:, None]
    proj = np.einsum("ti,tij,tj->t", e2, g, e1)
    e2 = e2 - proj[:, None] * e1
    n2 = np.sqrt(np.maximum(np.einsum("ti,tij,tj->t", e2, g, e2), 1e-300))
    e2 = e2 / n2[:, None]
    safe = np.maximum(gnorm, 1e-300)
    s11 = -np.einsum("ti,tij,tj->t", e1, hess, e1) / safe
    s22 = -np.einsum("ti,tij,tj->t", e2, hess, e2) / safe
    s12 = -np.einsum("ti,tij,tj->t", e1, hess, e2) / safe
    det_shape = s11 * s22 - s12 * s12
    pair = so3geom.riemann04(mesh.metric, th)
    w = np.stack(
        [
            e1[:, i] * e2[:, j] - e1[:, j] * e2[:, i]
            for (i, j) in so3geom.PAIRS
        ],
        axis=-1,
    )
    r_recon = np.einsum("ta,tab,tb->t", w, pair, w)
    kappa = det_shape - r_recon
    return float((kappa[ok] * mesh.areas[ok]).sum() / (4.0 * np.pi))


def _periodic_delta(x, y):
    d = x - y
    d[..., 0] = (d[..., 0] + np.pi) % (2.0 * np.pi) - np.pi
    d[..., 2] = (d[..., 2] + np.pi) % (2.0 * np.pi) - np.pi
    return d


def _stack_hessian(d):
    first = np.asarray(d["fpp"], dtype=float)
    hess = np.empty(first.shape + (3, 3))
    hess[..., 0, 0] = d["fpp"]
    hess[..., 0, 1] = hess[..., 1, 0] = d["fpt"]
    hess[..., 0, 2] = hess[..., 2, 0] = d["fps"]
    hess[..., 1, 1] = d["ftt"]
    hess[..., 1, 2] = hess[..., 2, 1] = d["fts"]
    hess[..., 2, 2] = d["fss"]
    return hess


class _CriticalPointFinder:
    """Newton polishing plus recursive box resolution for the Morse scan."""

    def __init__(self, grid):
        self.grid = grid
        self.gscale = max(grid.grad_scale, 1e-6)
        self.hscale = max(self.gscale * self.gscale, 1e-12)
        self.tol_g = 1e-10 * self.gscale
        self.cell = np.array([grid.dphi, grid.dtheta, grid.dpsi])
        self.diag = float(np.linalg.norm(self.cell))
        self.dedupe_tol = 0.3 * self.cell.min()
        self.points = np.zeros((0, 3))

    def newton(self, seeds, iters=40):
        """Batched Newton on grad f = 0; returns (endpoints, converged mask)."""
        x = seeds.copy()
        alive = np.ones(len(x), dtype=bool)
        done = np.zeros(len(x), dtype=bool)
        for _ in range(iters):
            idx = np.nonzero(alive)[0]
            if len(idx) == 0:
                break
            p = x[idx]
            d = self.grid.field.eval_many(p[:, 0], p[:, 1], p[:, 2], order=2)
            gvec = np.stack([d["fp"], d["ft"], d["fs"]], axis=-1)
            gn = np.linalg.norm(gvec, axis=1)
            conv = gn <= self.tol_g
            done[idx[conv]] = True
            alive[idx[conv]] = False
            idx = idx[~conv]
            if len(idx) == 0:
                break
            gvec = gvec[~conv]
            hess = _stack_hessian({k: v[~conv] for k, v in d.items() if k != "f_complex"})
            dets = np.abs(np.linalg.det(hess))
            sing = dets < 1e-14 * self.hscale**3
            alive[idx[sing]] = False  # failed seed
            idx = idx[~sing]
            if len(idx) == 0:
                continue
            step = np.linalg.solve(hess[~sing], gvec[~sing][..., None])[..., 0]
            norms = np.linalg.norm(step, axis=1)
            clip = np.minimum(1.0, 2.0 * self.diag / np.maximum(norms, 1e-300))
            x[idx] -= step * clip[:, None]
            x[idx, 0] %= 2.0 * np.pi
            x[idx, 2] %= 2.0 * np.pi
            esc = (x[idx, 1] <= 1e-6) | (x[idx, 1] >= np.pi - 1e-6)
            alive[idx[esc]] = False  # left the chart
        return x, done

    def absorb(self, pts):
        """Deduplicate new points (periodic in phi, psi) into self.points."""
        if len(pts) == 0:
            return
        pts = np.unique(np.round(pts, 6), axis=0)
        merged = list(self.points)
        for p in pts:
            if merged:
                dv = _periodic_delta(np.asarray(merged), p[None, :])
                if (np.einsum("ij,ij->i", dv, dv) < self.dedupe_tol**2).any():
                    continue
            merged.append(p)
        self.points = np.array(merged) if merged else np.zeros((0, 3))

    def _contained(self, centers, halves):
        """Boxes cleared by an accepted critical point.

        A box is cleared when an accepted point lies inside it (with a 1.5x
        componentwise margin) or within one cell diagonal of its center.  The
        absolute halo keeps boxes next to a found point from splitting
        forever; it assumes distinct critical points are at least a cell
        apart, which holds when the grid resolves the field's feature scale.
        """
        if len(self.points) == 0 or len(centers) == 0:
            return np.zeros(len(centers), dtype=bool)
        dv = _periodic_delta(self.points[None, :, :], centers[:, None, :])
        inside = (np.abs(dv) <= 1.5 * halves[:, None, :]).all(axis=2)
        near = np.linalg.norm(dv, axis=2) <= self.diag
        return (inside | near).any(axis=1)

    def _certified_empty(self, centers, halves):
        """Enclosure certificate that a box contains no gradient zero.

        Linearize the gradient at the box center: any zero must lie within
        |H0^-1| eps of the Newton target x0 - H0^-1 g0, where eps bounds the
        linearization error componentwise.  eps is measured on a 3^3 sample
        lattice (times a 1.5 smoothness safety factor), so if the Newton
        target sits outside the box by more than that enclosure radius, the
        box is empty.  Sharp here because the field is smooth at cell scale:
        candidate cells have all three gradient components vanishing
        somewhere, so simple gradient-norm floors can never clear them.
        """
        if len(centers) == 0:
            return np.zeros(0, dtype=bool)
        offs = np.array([-1.0, 0.0, 1.0])
        lat = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"), axis=-1).reshape(-1, 3)
        nb = len(centers)
        delta = lat[None, :, :] * halves[:, None, :]
        pts = (centers[:, None, :] + delta).reshape(-1, 3)
        d = self.grid.field.eval_many(pts[:, 0], pts[:, 1], pts[:, 2], order=2)
        g = np.stack([d["fp"], d["ft"], d["fs"]], axis=-1).reshape(nb, 27, 3)
        hess = _stack_hessian({k: v for k, v in d.items() if k != "f_complex"})
        hess = hess.reshape(nb, 27, 3, 3)
        h0 = hess[:, 13]  # lattice midpoint = box center
        g0 = g[:, 13]
        ok = np.abs(np.linalg.det(h0)) > 1e-14 * self.hscale**3
        cert = np.zeros(nb, dtype=bool)
        if ok.any():
            hinv = np.linalg.inv(h0[ok])
            step = -np.einsum("bij,bj->bi", hinv, g0[ok])
            lin = g0[ok][:, None, :] + np.einsum("bij,bkj->bki", h0[ok], delta[ok])
            eps = 1.5 * np.abs(g[ok] - lin).max(axis=1)
            margin = halves[ok] + np.einsum("bij,bj->bi", np.abs(hinv), eps)
            cert[ok] = (np.abs(step) > margin).any(axis=1)
        return cert

    def resolve(self, centers, max_depth=6, max_boxes=40000):
        """Resolve cells where center-seeded Newton failed.

        Each level: drop boxes cleared by containment or the enclosure
        certificate, polish survivors with Newton (depth > 0; depth-0 centers
        were already Newton seeds), re-test containment, then split what is
        left into 2^3 children.  Returns the number of boxes that bottom out
        (or overflow the box budget) unresolved.
        """
        halves = np.broadcast_to(0.5 * self.cell, centers.shape).copy()
        for depth in range(max_depth + 1):
            if len(centers) == 0:
                return 0
            keep = ~self._contained(centers, halves)
            centers, halves = centers[keep], halves[keep]
            if len(centers) == 0:
                return 0
            keep = ~self._certified_empty(centers, halves)
            centers, halves = centers[keep], halves[keep]
            if len(centers) == 0:
                return 0
            if depth > 0:
                x, done = self.newton(centers, iters=15)
                self.absorb(x[done])
                keep = ~self._contained(centers, halves)
                centers, halves = centers[keep], halves[keep]
            if depth == max_depth or len(centers) * 8 > max_boxes:
                break
            signs = np.stack(
                np.meshgrid([-0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5], indexing="ij"), axis=-1
            ).reshape(-1, 3)
            centers = (centers[:, None, :] + signs[None, :, :] * halves[:, None, :]).reshape(-1, 3)
            halves = np.repeat(0.5 * halves, 8, axis=0)
        return len(centers)


def morse_critical_points(grid: EulerGrid):
    """Find the critical points of the field inside the covered theta slab.

    Candidate cells are those where all three chart gradient components
    change sign among the 8 corners.  Candidates are polished by batched
    Newton iteration; candidates where Newton fails are resolved by a
    recursive subdivision that either certifies the absence of a zero
    (gradient-norm floor against a local Lipschitz bound), lands inside the
    neighborhood of an accepted point, or converges from a finer seed.
    Boxes still open after that are counted as unresolved.

    Returns (points (C, 3), values (C,), Morse indices (C,), unresolved).
    A numerically singular Hessian at an accepted point raises
    DegeneratePointError.
    """
    if grid._criticals is not None:
        return grid._criticals
    n = grid.resolution
    corner = [(b & 1, (b >> 1) & 1, (b >> 2) & 1) for b in range(8)]
    cand = np.ones((n, n - 1, n), dtype=bool)
    for arr in (grid.fp, grid.ft, grid.fs):
        any_pos = np.zeros((n, n - 1, n), dtype=bool)
        any_neg = np.zeros((n, n - 1, n), dtype=bool)
        for di, dj, dk in corner:
            a = np.roll(np.roll(arr, -di, axis=0), -dk, axis=2)[:, dj : dj + n - 1, :]
            any_pos |= a > 0
            any_neg |= a < 0
        cand &= any_pos & any_neg
    ci, cj, ck = np.nonzero(cand)
    finder = _CriticalPointFinder(grid)
    unresolved = 0
    if len(ci):
        centers = np.stack(
            [(ci + 0.5) * grid.dphi, (cj + 1.0) * grid.dtheta, (ck + 0.5) * grid.dpsi], axis=-1
        )
        x, done = finder.newton(centers)
        finder.absorb(x[done])
        unresolved = finder.resolve(centers[~done])
    pts = finder.points

    if len(pts):
        d = grid.field.eval_many(pts[:, 0], pts[:, 1], pts[:, 2], order=2)
        values = np.asarray(d["f"], dtype=float).reshape(len(pts))
        eig = np.linalg.eigvalsh(_stack_hessian(d))
        if np.any(np.min(np.abs(eig), axis=1) < 1e-6 * finder.hscale):
            raise DegeneratePointError("critical point with near-singular Hessian")
        indices = (eig < 0).sum(axis=1)
    else:
        values = np.zeros(0)
        indices = np.zeros(0, dtype=int)

    grid._criticals = (pts, values, indices, unresolved)
    return grid._criticals


def estimate_L0_morse(grid: EulerGrid, u) -> float:
    """chi of {f >= u} by Morse counting: sum over critical points with
    f >= u of (-1)^(3 - index)."""
    pts, values, indices, unresolved = morse_critical_points(grid)
    if unresolved:
        raise UnreliableEstimateError(f"{unresolved} critical-point regions unresolved")
    sel = values >= u
    return float(((-1.0) ** (3 - indices[sel])).sum())


# ---------------------------------------------------------------------------
# full report
# ---------------------------------------------------------------------------


def report(grid: EulerGrid, u, l2_method="mesh", l0_method="both") -> dict:
    """All estimates for one threshold, as written to CLI/experiment output."""
    mesh = extract_level_surface(grid, u)
    if len(mesh.triangles):
        _, _, skipped = mean_out_curvature(mesh)
    else:
        skipped = 0.0
    if l2_method == "mesh":
        l2 = estimate_L2(grid, u, mesh)
    elif l2_method == "crossings":
        l2 = estimate_L2_crossings(grid, u)
    else:
        raise ValueError(f"unknown L2 method {l2_method!r}")
    if l0_method not in ("gb", "morse", "both"):
        raise ValueError(f"unknown L0 method {l0_method!r}")
    out = {
        "u": float(u),
        "L0_gb": estimate_L0_gaussbonnet(grid, u, mesh) if l0_method in ("gb", "both") else None,
        "L0_morse": estimate_L0_morse(grid, u) if l0_method in ("morse", "both") else None,
        "L1": estimate_L1(grid, u, mesh),
        "L2": l2,
        "L3": estimate_L3(grid, u),
        "skipped_area_fraction": skipped,
    }
    return out

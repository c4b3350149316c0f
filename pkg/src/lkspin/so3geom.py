"""Left-invariant metrics on SO(3) in Euler-angle coordinates.

A metric in this family is determined by two parameters: xi > 0 scales the
directions transverse to the third-axis circle and s != 0 scales the circle
direction.  In the z-y-z Euler chart (phi, theta, psi) its Gram matrix is

    G(theta) = [[xi^2 sin^2(th) + s^2 cos^2(th), 0, s^2 cos(th)],
                [0,                        xi^2, 0           ],
                [s^2 cos(th),                 0, s^2         ]],

with det G = xi^4 s^2 sin^2(th).  (xi, s) = (1, 1) is the standard
bi-invariant metric in which SO(3) = S^3(radius 2)/±1 and Vol = 8 pi^2.

The module provides the Gram matrix, its inverse, Christoffel symbols,
the curvature tensor in both (0,4) and (1,3) form, scalar and sectional
curvatures, the volume density, and the Lipschitz-Killing curvatures of
the whole group.  Chart index order is x1=phi, x2=theta, x3=psi; the (0,4)
curvature is stored on the lexicographic pair basis (1,2),(1,3),(2,3).

The (0,4) components are hard-coded closed forms; the (1,3) tensor is
built from the Christoffel symbols and their analytic theta-derivative via

    R^m_{ijk} = d_i G^m_{jk} - d_j G^m_{ik} + G^m_{ih} G^h_{jk} - G^m_{jh} G^h_{ik}

so lowering one with the Gram matrix is a genuine cross-check of the other.
"""

from dataclasses import dataclass

import numpy as np

TENSOR_KINDS = ("Gram", "GramInverse", "Christoffel", "Riemann04", "Riemann13")

#: lexicographic pair basis of the (0,4) curvature, 0-based chart indices
PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class LeftInvariantMetric:
    """Metric parameters; xi > 0, s != 0."""

    xi: float
    s: float

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError(f"xi must be > 0, got {self.xi}")
        if self.s == 0:
            raise ValueError("s must be nonzero (the metric degenerates at s=0)")


@dataclass(frozen=True)
class CoordinateTensor:
    """A tensor of one of TENSOR_KINDS evaluated at a fixed theta."""

    kind: str
    theta: float
    components: np.ndarray

    def __post_init__(self):
        if self.kind not in TENSOR_KINDS:
            raise ValueError(f"unknown tensor kind {self.kind!r}")


STANDARD = LeftInvariantMetric(1.0, 1.0)


def _check_open_theta(theta):
    theta = np.asarray(theta)
    if not np.all((theta > 0.0) & (theta < np.pi)):
        raise ValueError("theta must lie strictly inside (0, pi)")


def gram(metric: LeftInvariantMetric, theta):
    """Chart Gram matrix G(theta); valid on the closed interval [0, pi].

    theta may be an array, in which case the matrix axes come last.
    """
    theta = np.asarray(theta, dtype=float)
    x2, s2 = metric.xi**2, metric.s**2
    st, ct = np.sin(theta), np.cos(theta)
    out = np.zeros(theta.shape + (3, 3))
    out[..., 0, 0] = x2 * st**2 + s2 * ct**2
    out[..., 0, 2] = out[..., 2, 0] = s2 * ct
    out[..., 1, 1] = x2
    out[..., 2, 2] = s2
    return out


def gram_inverse(metric: LeftInvariantMetric, theta):
    """Inverse Gram matrix; theta in the open chart interval."""
    _check_open_theta(theta)
    theta = np.asarray(theta, dtype=float)
    x2, s2 = metric.xi**2, metric.s**2
    st, ct = np.sin(theta), np.cos(theta)
    a = 1.0 / (x2 * st**2)
    out = np.zeros(theta.shape + (3, 3))
    out[..., 0, 0] = a
    out[..., 0, 2] = out[..., 2, 0] = -ct * a
    out[..., 1, 1] = 1.0 / x2
    out[..., 2, 2] = 1.0 / s2 + ct**2 * a
    return out


def christoffel(metric: LeftInvariantMetric, theta):
    """Christoffel symbols, closed form; out[..., k, i, j] = Gamma^k_{ij}."""
    _check_open_theta(theta)
    theta = np.asarray(theta, dtype=float)
    h = metric.s**2 / (2.0 * metric.xi**2)
    st, ct = np.sin(theta), np.cos(theta)
    out = np.zeros(theta.shape + (3, 3, 3))
    out[..., 0, 0, 1] = out[..., 0, 1, 0] = ct / st * (1.0 - h)
    out[..., 0, 1, 2] = out[..., 0, 2, 1] = -h / st
    out[..., 1, 0, 0] = -st * ct * (1.0 - 2.0 * h)
    out[..., 1, 0, 2] = out[..., 1, 2, 0] = h * st
    out[..., 2, 0, 1] = out[..., 2, 1, 0] = -(1.0 - h) * ct**2 / st - st / 2.0
    out[..., 2, 1, 2] = out[..., 2, 2, 1] = ct / st * h
    return out


def christoffel_theta_derivative(metric: LeftInvariantMetric, theta):
    """Analytic d/dtheta of the Christoffel symbols (same layout)."""
    _check_open_theta(theta)
    theta = np.asarray(theta, dtype=float)
    h = metric.s**2 / (2.0 * metric.xi**2)
    st, ct = np.sin(theta), np.cos(theta)
    out = np.zeros(theta.shape + (3, 3, 3))
    out[..., 0, 0, 1] = out[..., 0, 1, 0] = -(1.0 - h) / st**2
    out[..., 0, 1, 2] = out[..., 0, 2, 1] = h * ct / st**2
    out[..., 1, 0, 0] = -np.cos(2.0 * theta) * (1.0 - 2.0 * h)
    out[..., 1, 0, 2] = out[..., 1, 2, 0] = h * ct
    out[..., 2, 0, 1] = out[..., 2, 1, 0] = (1.0 - h) * ct * (1.0 + st**2) / st**2 - ct / 2.0
    out[..., 2, 1, 2] = out[..., 2, 2, 1] = -h / st**2
    return out


def riemann04(metric: LeftInvariantMetric, theta):
    """(0,4) curvature on the pair basis PAIRS (symmetric 3x3 matrix)."""
    x2, s2 = metric.xi**2, metric.s**2
    theta = np.asarray(theta, dtype=float)
    st2 = np.sin(theta) ** 2
    ct = np.cos(theta)
    q = s2 * s2 / (4.0 * x2)
    out = np.zeros(theta.shape + (3, 3))
    out[..., 0, 0] = -st2 * (x2 - 0.75 * s2) - (1.0 - st2) * q
    out[..., 0, 2] = out[..., 2, 0] = ct * q
    out[..., 1, 1] = -st2 * q
    out[..., 2, 2] = -q
    return out


def riemann13(metric: LeftInvariantMetric, theta):
    """(1,3) curvature from the Christoffel symbols; out[m,i,j,k] = R^m_{ijk}."""
    g = christoffel(metric, theta)
    dg = christoffel_theta_derivative(metric, theta)
    # only the theta-derivative survives: d_1 = d_3 = 0 for every symbol
    grad = np.zeros((3, 3, 3, 3))
    grad[1] = dg  # grad[i, m, j, k] = d_i Gamma^m_{jk}
    quad = np.einsum("mih,hjk->mijk", g, g)
    out = (
        np.transpose(grad, (1, 0, 2, 3))
        - np.transpose(grad, (1, 2, 0, 3))
        + quad
        - np.transpose(quad, (0, 2, 1, 3))
    )
    return out


def riemann04_full(metric: LeftInvariantMetric, theta):
    """Full (0,4) tensor R_{ijkl} expanded from the pair-basis matrix."""
    m = riemann04(metric, theta)
    out = np.zeros((3, 3, 3, 3))
    for a, (i, j) in enumerate(PAIRS):
        for b, (k, l) in enumerate(PAIRS):
            v = m[a, b]
            out[i, j, k, l] = v
            out[j, i, k, l] = -v
            out[i, j, l, k] = -v
            out[j, i, l, k] = v
    return out


def lower_riemann13(metric: LeftInvariantMetric, theta):
    """R_{ijkl} = R^m_{ijk} g_{lm}, reduced to the pair basis for comparison
    with riemann04."""
    r13 = riemann13(metric, theta)
    g = gram(metric, theta)
    full = np.einsum("mijk,lm->ijkl", r13, g)
    out = np.empty((3, 3))
    for a, (i, j) in enumerate(PAIRS):
        for b, (k, l) in enumerate(PAIRS):
            out[a, b] = full[i, j, k, l]
    return out


def riemann_apply(pair_matrix, u, v, w, z):
    """Evaluate the (0,4) curvature R(u,v,w,z) from its pair-basis matrix."""
    acc = 0.0
    for a, (i, j) in enumerate(PAIRS):
        uv = u[i] * v[j] - u[j] * v[i]
        for b, (k, l) in enumerate(PAIRS):
            acc += pair_matrix[a, b] * uv * (w[k] * z[l] - w[l] * z[k])
    return acc


def scalar_curvature(metric: LeftInvariantMetric):
    """Scalar curvature, constant over the group: 2/xi^2 - s^2/(2 xi^4)."""
    x2 = metric.xi**2
    return 2.0 / x2 - metric.s**2 / (2.0 * x2 * x2)


def sectional(metric: LeftInvariantMetric, theta, plane):
    """Sectional curvature of a coordinate plane, plane in {(1,2),(1,3),(2,3)}."""
    _check_open_theta(theta)
    x2, s2 = metric.xi**2, metric.s**2
    if plane in ((1, 3), (2, 3)):
        return s2 / (4.0 * x2 * x2)
    if plane != (1, 2):
        raise ValueError(f"plane must be one of (1,2),(1,3),(2,3), got {plane}")
    st2 = np.sin(theta) ** 2
    ct2 = 1.0 - st2
    num = st2 * (x2 - 0.75 * s2) + ct2 * s2 * s2 / (4.0 * x2)
    den = st2 * x2 * x2 + ct2 * s2 * x2
    return num / den


def volume_element(metric: LeftInvariantMetric, theta):
    """Riemannian volume density in the chart: xi^2 |s| sin(theta)."""
    return metric.xi**2 * abs(metric.s) * np.sin(theta)


def lk_so3(metric: LeftInvariantMetric):
    """Lipschitz-Killing curvatures (L0, L1, L2, L3) of the whole group."""
    x2, s2 = metric.xi**2, metric.s**2
    return (
        0.0,
        4.0 * abs(metric.s) * np.pi * (1.0 - s2 / (4.0 * x2)),
        0.0,
        8.0 * np.pi**2 * x2 * abs(metric.s),
    )


def coordinate_tensor(metric: LeftInvariantMetric, theta, kind: str):
    """Uniform accessor used by the CLI `geometry` dump."""
    funcs = {
        "Gram": gram,
        "GramInverse": gram_inverse,
        "Christoffel": christoffel,
        "Riemann04": riemann04,
        "Riemann13": riemann13,
    }
    if kind not in funcs:
        raise ValueError(f"unknown tensor kind {kind!r}")
    return CoordinateTensor(kind, float(theta), funcs[kind](metric, theta))

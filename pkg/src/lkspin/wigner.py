"""Wigner rotation-matrix elements on SO(3).

d^l_{m,n}(theta) is the little-d matrix element in the convention

    d^l_{m,n}(theta) = sum_k (-1)^{k+n-m}
        sqrt[(l+m)!(l-m)!(l+n)!(l-n)!]
        / [k!(l+m-k)!(l-n-k)!(n-m+k)!]
        * cos(theta/2)^{2l+m-n-2k} * sin(theta/2)^{2k+n-m},

with k running over max(0, m-n) .. min(l+m, l-n), so that d^l_{m,n}(0) =
delta_{mn} and the (2l+1)x(2l+1) matrix D^l_{m,n}(phi,theta,psi) =
exp(-i m phi) d^l_{m,n}(theta) exp(-i n psi) is unitary.

Factorial prefactors are evaluated in log space (gammaln), so single
elements stay accurate for degrees into the hundreds.  theta-derivatives
are computed termwise from the same expansion (one code path, no
recurrences): with c = cos(theta/2), s = sin(theta/2),

    (c^p s^q)'  = (q c^{p+1} s^{q-1} - p c^{p-1} s^{q+1}) / 2
    (c^p s^q)'' = (q(q-1) c^{p+2} s^{q-2} - (2pq+p+q) c^p s^q
                   + p(p-1) c^{p-2} s^{q+2}) / 4.

Negative powers only ever appear with a vanishing coefficient and are
masked before exponentiation.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln


@dataclass(frozen=True)
class WignerIndex:
    """Index triple (l, m, s) of a matrix element, |m| <= l and |s| <= l."""

    l: int
    m: int
    s: int

    def __post_init__(self):
        for name in ("l", "m", "s"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise ValueError(f"{name} must be an integer, got {v!r}")
        if self.l < 0:
            raise ValueError(f"degree l must be >= 0, got {self.l}")
        if abs(self.m) > self.l or abs(self.s) > self.l:
            raise ValueError(
                f"orders must satisfy |m|,|s| <= l, got (l,m,s)="
                f"({self.l},{self.m},{self.s})"
            )


@lru_cache(maxsize=None)
def _terms(l, m, n):
    """Signed coefficients and (cos, sin) half-angle exponents of d^l_{m,n}.

    Cached per index; callers must treat the returned arrays as read-only.
    """
    k = np.arange(max(0, m - n), min(l + m, l - n) + 1)
    logfac = 0.5 * (
        gammaln(l + m + 1) + gammaln(l - m + 1) + gammaln(l + n + 1) + gammaln(l - n + 1)
    ) - (
        gammaln(k + 1)
        + gammaln(l + m - k + 1)
        + gammaln(l - n - k + 1)
        + gammaln(n - m + k + 1)
    )
    sign = np.where((k + n - m) % 2 == 0, 1.0, -1.0)
    coef = sign * np.exp(logfac)
    p = 2 * l + m - n - 2 * k
    q = 2 * k + n - m
    return coef, p, q


def _pow(base, expo):
    """base**expo for exponent arrays; negative exponents (whose terms always
    carry a zero coefficient) are masked to avoid 0**negative."""
    e = np.where(expo < 0, 0, expo)
    return base[..., None] ** e


def _check_theta(theta):
    th = np.asarray(theta, dtype=float)
    if np.any(th < -1e-12) or np.any(th > np.pi + 1e-12):
        raise ValueError("theta must lie in [0, pi]")
    return th


def wigner_d(idx: WignerIndex, theta):
    """Real matrix element d^l_{m,s}(theta), theta in [0, pi] (scalar or array)."""
    th = _check_theta(theta)
    coef, p, q = _terms(idx.l, idx.m, idx.s)
    c, s = np.cos(th / 2.0), np.sin(th / 2.0)
    val = np.sum(coef * _pow(c, p) * _pow(s, q), axis=-1)
    return float(val) if np.isscalar(theta) else val


def wigner_d_theta_derivs(idx: WignerIndex, theta, order: int):
    """Analytic theta-derivative of d^l_{m,s} of the given order (1 or 2)."""
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    th = _check_theta(theta)
    coef, p, q = _terms(idx.l, idx.m, idx.s)
    c, s = np.cos(th / 2.0), np.sin(th / 2.0)
    if order == 1:
        val = 0.5 * np.sum(
            coef * (q * _pow(c, p + 1) * _pow(s, q - 1) - p * _pow(c, p - 1) * _pow(s, q + 1)),
            axis=-1,
        )
    else:
        val = 0.25 * np.sum(
            coef
            * (
                q * (q - 1) * _pow(c, p + 2) * _pow(s, q - 2)
                - (2 * p * q + p + q) * _pow(c, p) * _pow(s, q)
                + p * (p - 1) * _pow(c, p - 2) * _pow(s, q + 2)
            ),
            axis=-1,
        )
    return float(val) if np.isscalar(theta) else val


def half_angle_tables(theta, l_max):
    """Power tables (c^j, s^j) of the half-angle cosine/sine, j = 0..2l+2.

    Shared across all (m, n) at the same theta so that batched synthesis can
    evaluate every element by integer-exponent gathers instead of float
    powers; see wigner_d_from_tables.
    """
    th = _check_theta(theta)
    c, s = np.cos(th / 2.0), np.sin(th / 2.0)
    n = 2 * int(l_max) + 3  # second derivatives reach exponent 2l+2
    cp = np.empty(th.shape + (n,))
    sp = np.empty(th.shape + (n,))
    cp[..., 0] = 1.0
    sp[..., 0] = 1.0
    for j in range(1, n):
        cp[..., j] = cp[..., j - 1] * c
        sp[..., j] = sp[..., j - 1] * s
    return cp, sp


def wigner_d_from_tables(idx: WignerIndex, cp, sp, order=0):
    """d^l_{m,s} or its theta-derivative from half_angle_tables output.

    Index arithmetic can touch position -1 or -2 of the tables, but only in
    terms whose integer prefactor (p, q, p(p-1), q(q-1)) vanishes, so the
    gathered garbage never contributes.
    """
    coef, p, q = _terms(idx.l, idx.m, idx.s)
    if order == 0:
        return (coef * cp[..., p] * sp[..., q]).sum(axis=-1)
    if order == 1:
        return 0.5 * (
            coef * (q * cp[..., p + 1] * sp[..., q - 1] - p * cp[..., p - 1] * sp[..., q + 1])
        ).sum(axis=-1)
    if order == 2:
        return 0.25 * (
            coef
            * (
                q * (q - 1) * cp[..., p + 2] * sp[..., q - 2]
                - (2 * p * q + p + q) * cp[..., p] * sp[..., q]
                + p * (p - 1) * cp[..., p - 2] * sp[..., q + 2]
            )
        ).sum(axis=-1)
    raise ValueError(f"order must be 0, 1 or 2, got {order}")


@lru_cache(maxsize=None)
def synthesis_matrices(l, n):
    """Monomial-to-element matrices for all orders m at fixed (l, n).

    Every term of d^l_{m,n} is c^p s^q with p + q = 2l, so the whole column
    m = -l..l is a linear map of the monomial vector (c^p s^{2l-p})_{p=0..2l},
    and theta-differentiation acts inside the same monomial family.  Returns
    (M0, M1, M2), each (2l+1, 2l+1) with rows m+l and columns p, such that
    d^l_{m,n} and its first two theta-derivatives are M @ monomials.
    Callers must treat the returned arrays as read-only.
    """
    size = 2 * l + 1
    m0 = np.zeros((size, size))
    m1 = np.zeros((size, size))
    m2 = np.zeros((size, size))
    for m in range(-l, l + 1):
        coef, p, q = _terms(l, m, n)
        for ck, pk, qk in zip(coef, p, q):
            m0[m + l, pk] += ck
            if qk:
                m1[m + l, pk + 1] += 0.5 * ck * qk
            if pk:
                m1[m + l, pk - 1] -= 0.5 * ck * pk
            if qk > 1:
                m2[m + l, pk + 2] += 0.25 * ck * qk * (qk - 1)
            m2[m + l, pk] -= 0.25 * ck * (2 * pk * qk + pk + qk)
            if pk > 1:
                m2[m + l, pk - 2] += 0.25 * ck * pk * (pk - 1)
    return m0, m1, m2


def monomial_table(theta, l):
    """The degree-2l half-angle monomials c^p s^{2l-p}, p = 0..2l, stacked
    on a trailing axis; feed to the synthesis_matrices maps."""
    th = _check_theta(theta)
    c, s = np.cos(th / 2.0), np.sin(th / 2.0)
    size = 2 * l + 1
    cp = np.empty(th.shape + (size,))
    sp = np.empty(th.shape + (size,))
    cp[..., 0] = 1.0
    sp[..., 0] = 1.0
    for j in range(1, size):
        cp[..., j] = cp[..., j - 1] * c
        sp[..., j] = sp[..., j - 1] * s
    return cp * sp[..., ::-1]


def _angles(point):
    if hasattr(point, "phi"):
        return point.phi, point.theta, point.psi
    phi, theta, psi = point
    return phi, theta, psi


def wigner_D(idx: WignerIndex, point):
    """Complex element D^l_{m,s} at a rotation given by Euler angles.

    `point` is either an object with .phi/.theta/.psi attributes or a
    (phi, theta, psi) triple (z-y-z convention).
    """
    phi, theta, psi = _angles(point)
    return (
        np.exp(-1j * idx.m * np.asarray(phi))
        * wigner_d(idx, theta)
        * np.exp(-1j * idx.s * np.asarray(psi))
    )


def wigner_d_matrix(l: int, theta):
    """Full (2l+1)x(2l+1) little-d matrix, rows m, cols n, each in -l..l."""
    th = _check_theta(theta)
    out = np.empty((2 * l + 1, 2 * l + 1) + th.shape)
    for m in range(-l, l + 1):
        for n in range(-l, l + 1):
            out[m + l, n + l] = wigner_d(WignerIndex(l, m, n), th)
    return out

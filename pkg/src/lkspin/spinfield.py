"""Band-limited Gaussian spin fields on SO(3).

A spin-s field with spectral coefficients c_l > 0 (l >= |s|) is

    X(p) = sum_l c_l sum_{m=-l..l} gamma^l_m D^l_{m,s}(p),      f = Re X,

where the gamma^l_m are independent complex Gaussians with Re, Im ~
N(0, 1/2).  With the normalization sum_l c_l^2 / 2 = 1 the real field f has
unit variance.  Right rotation about the third axis only multiplies X by a
phase: X(p R_3(a)) = X(p) e^{-i s a}.

Covariance of f between two rotations p, q depends on the relative rotation
q^{-1} p with Euler angles (phi, theta, psi):

    E[f(p) f(q)] = (1/2) cos(s (phi + psi)) k(theta),
    k(theta) = sum_l c_l^2 d^l_{s,s}(theta).

The induced gradient metric has chart Gram matrix Sigma_(xi,s)(theta) (see
so3geom.gram) with xi^2 = sum_l (c_l^2/2) (l(l+1) - s^2)/2 = -k''(0)/2.

Randomness is drawn from one counter-based Philox stream per spectral
coefficient, keyed by (seed..., l, m+l), so realizations are bit-identical
regardless of evaluation order or thread count, and a realization is fully
determined by (spec, seed).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import so3geom
from .wigner import (
    WignerIndex,
    half_angle_tables,
    monomial_table,
    synthesis_matrices,
    wigner_d,
    wigner_d_from_tables,
)

#: derivative keys by order: value, chart gradient, raw chart Hessian
DERIV_KEYS = (("f",), ("fp", "ft", "fs"), ("fpp", "fpt", "fps", "ftt", "fts", "fss"))


@dataclass(frozen=True)
class EulerPoint:
    """A rotation given by z-y-z Euler angles, theta in [0, pi]."""

    phi: float
    theta: float
    psi: float

    def matrix(self):
        cf, sf = np.cos(self.phi), np.sin(self.phi)
        ct, st = np.cos(self.theta), np.sin(self.theta)
        cp, sp = np.cos(self.psi), np.sin(self.psi)
        r3f = np.array([[cf, -sf, 0.0], [sf, cf, 0.0], [0.0, 0.0, 1.0]])
        r2 = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
        r3p = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
        return r3f @ r2 @ r3p

    @classmethod
    def from_matrix(cls, r):
        st = np.hypot(r[0, 2], r[1, 2])
        theta = np.arctan2(st, r[2, 2])
        if st < 1e-14:
            # chart seam: only phi+psi (theta=0) or phi-psi (theta=pi) matters
            phi = np.arctan2(r[1, 0], r[0, 0]) if r[2, 2] > 0 else np.arctan2(-r[1, 0], -r[0, 0])
            return cls(float(phi), float(theta), 0.0)
        return cls(
            float(np.arctan2(r[1, 2], r[0, 2])),
            float(theta),
            float(np.arctan2(r[2, 1], -r[2, 0])),
        )


@dataclass(frozen=True)
class SpectrumSpec:
    """Spin weight s and strictly positive coefficients {l: c_l}, l >= |s|."""

    s: int
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.s, (int, np.integer)):
            raise ValueError(f"spin must be an integer, got {self.s!r}")
        if not self.coeffs:
            raise ValueError("spectrum must contain at least one coefficient")
        clean = {}
        for l, c in sorted(self.coeffs.items()):
            l = int(l)
            if l < abs(self.s):
                raise ValueError(f"degree l={l} below |s|={abs(self.s)}")
            if not c > 0:
                raise ValueError(f"coefficient c_{l} must be > 0, got {c}")
            clean[l] = float(c)
        object.__setattr__(self, "coeffs", clean)
        object.__setattr__(self, "s", int(self.s))

    # -- spectral summaries -------------------------------------------------

    def total_power(self):
        return sum(c * c / 2.0 for c in self.coeffs.values())

    def normalize(self):
        """Rescale so the real field has unit variance (sum c_l^2/2 = 1)."""
        scale = 1.0 / np.sqrt(self.total_power())
        return SpectrumSpec(self.s, {l: c * scale for l, c in self.coeffs.items()})

    def xi_squared(self):
        """Transverse second spectral moment: sum (c^2/2)(l(l+1)-s^2)/2."""
        s2 = self.s * self.s
        return sum((c * c / 2.0) * (l * (l + 1) - s2) / 2.0 for l, c in self.coeffs.items())

    def circular_covariance(self, theta):
        """k(theta) = sum c_l^2 d^l_{s,s}(theta)."""
        return sum(
            c * c * wigner_d(WignerIndex(l, self.s, self.s), theta)
            for l, c in self.coeffs.items()
        )

    def covariance(self, p: EulerPoint, q: EulerPoint):
        """E[f(p) f(q)] from the relative rotation q^{-1} p."""
        rel = EulerPoint.from_matrix(q.matrix().T @ p.matrix())
        return (
            0.5
            * np.cos(self.s * (rel.phi + rel.psi))
            * self.circular_covariance(rel.theta)
        )

    # -- constructors / persistence -----------------------------------------

    @classmethod
    def power_law(cls, s, l_min, l_max, exponent=-2.0):
        """Normalized spectrum with c_l proportional to (1+l)^exponent."""
        if l_min < abs(s) or l_max < l_min:
            raise ValueError("need |s| <= l_min <= l_max")
        raw = {l: (1.0 + l) ** exponent for l in range(l_min, l_max + 1)}
        return cls(s, raw).normalize()

    @classmethod
    def two_band(cls, xi, s):
        """Normalized two-line spectrum hitting a target xi exactly.

        Mixes the two adjacent degrees whose gradient rates (l(l+1)-s^2)/2
        bracket xi^2.  Raises if xi^2 is below the smallest attainable rate.
        """
        if s == 0:
            raise ValueError("two_band needs spin s != 0")
        xi2 = float(xi) ** 2
        rate = lambda l: (l * (l + 1) - s * s) / 2.0
        l0 = abs(s)
        if xi2 < rate(l0):
            raise ValueError(f"xi^2={xi2} unreachable: minimum rate is {rate(l0)}")
        while rate(l0 + 1) <= xi2:
            l0 += 1
        if rate(l0) == xi2:
            return cls(s, {l0: np.sqrt(2.0)})
        w = (rate(l0 + 1) - xi2) / (rate(l0 + 1) - rate(l0))
        return cls(s, {l0: np.sqrt(2.0 * w), l0 + 1: np.sqrt(2.0 * (1.0 - w))})

    def to_json_dict(self):
        return {"s": self.s, "coeffs": {str(l): c for l, c in self.coeffs.items()}}

    @classmethod
    def from_json_dict(cls, d):
        return cls(int(d["s"]), {int(l): float(c) for l, c in d["coeffs"].items()})


def _seed_entropy(seed):
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(x) for x in seed)


class FieldRealization:
    """One draw of the Gaussian coefficients for a given spectrum and seed."""

    def __init__(self, spec: SpectrumSpec, seed, gammas=None):
        self.spec = spec
        self.seed = seed
        if gammas is None:
            gammas = {}
            base = _seed_entropy(seed)
            scale = np.sqrt(0.5)
            for l in spec.coeffs:
                g = np.empty(2 * l + 1, dtype=complex)
                for j in range(2 * l + 1):
                    ss = np.random.SeedSequence(entropy=base + (l, j))
                    gen = np.random.Generator(np.random.Philox(ss))
                    re, im = gen.normal(0.0, scale, 2)
                    g[j] = re + 1j * im
                gammas[l] = g
        self.gammas = gammas

    # -- evaluation ----------------------------------------------------------

    def eval_many(self, phi, theta, psi, order=0):
        """Field value and chart derivatives at scattered points.

        Returns a dict with key 'f' and, for order >= 1, the chart gradient
        'fp','ft','fs' (d/dphi, d/dtheta, d/dpsi) and for order == 2 the six
        raw second derivatives 'fpp','fpt','fps','ftt','fts','fss'.
        """
        phi = np.asarray(phi, dtype=float)
        theta = np.asarray(theta, dtype=float)
        psi = np.asarray(psi, dtype=float)
        s = self.spec.s
        shape = np.broadcast(phi, theta, psi).shape
        S0 = np.zeros(shape, dtype=complex)
        S1 = S2 = T0 = T1 = U0 = None
        if order >= 1:
            S1 = np.zeros(shape, dtype=complex)
            T0 = np.zeros(shape, dtype=complex)
        if order >= 2:
            S2 = np.zeros(shape, dtype=complex)
            T1 = np.zeros(shape, dtype=complex)
            U0 = np.zeros(shape, dtype=complex)
        e = np.exp(-1j * phi)
        for l, c in self.spec.coeffs.items():
            marr = np.arange(-l, l + 1)
            mono = monomial_table(theta, l)
            m0, m1, m2 = synthesis_matrices(l, s)
            d0 = mono @ m0.T  # (..., 2l+1): element values for every m
            pw = np.empty(shape + (l + 1,), dtype=complex)
            pw[..., 0] = 1.0
            for k in range(1, l + 1):
                pw[..., k] = pw[..., k - 1] * e
            ph = np.concatenate([np.conj(pw[..., :0:-1]), pw], axis=-1)  # m = -l..l
            w = ph * (c * self.gammas[l])
            S0 += (w * d0).sum(axis=-1)
            if order >= 1:
                d1 = mono @ m1.T
                S1 += (w * d1).sum(axis=-1)
                T0 += (w * (-1j * marr) * d0).sum(axis=-1)
            if order >= 2:
                d2 = mono @ m2.T
                S2 += (w * d2).sum(axis=-1)
                T1 += (w * (-1j * marr) * d1).sum(axis=-1)
                U0 += (w * (-(marr * marr)) * d0).sum(axis=-1)
        E = np.exp(-1j * s * psi)
        out = {"f": np.real(E * S0), "f_complex": E * S0}
        if order >= 1:
            out["fp"] = np.real(E * T0)
            out["ft"] = np.real(E * S1)
            out["fs"] = np.real(-1j * s * E * S0)
        if order >= 2:
            out["fpp"] = np.real(E * U0)
            out["fpt"] = np.real(E * T1)
            out["fps"] = np.real(-1j * s * E * T0)
            out["ftt"] = np.real(E * S2)
            out["fts"] = np.real(-1j * s * E * S1)
            out["fss"] = np.real(-(s * s) * E * S0)
        return out

    def eval_grid(self, phis, thetas, psis, order=0):
        """Same quantities on the product grid phis x thetas x psis.

        Uses the separable structure X = e^{-is psi} sum_m e^{-im phi} A_m(theta)
        so the work is O(n_coeff * n_phi * n_theta) plus outer products.
        """
        phis = np.asarray(phis, dtype=float)
        thetas = np.asarray(thetas, dtype=float)
        psis = np.asarray(psis, dtype=float)
        s = self.spec.s
        P, T = len(phis), len(thetas)
        n_mats = 1 if order == 0 else (3 if order == 1 else 6)
        mats = [np.zeros((P, T), dtype=complex) for _ in range(n_mats)]
        cp, sp = half_angle_tables(thetas, max(self.spec.coeffs))
        for l, c in self.spec.coeffs.items():
            g = self.gammas[l]
            for m in range(-l, l + 1):
                beta = c * g[m + l]
                idx = WignerIndex(l, m, s)
                phase = beta * np.exp(-1j * m * phis)[:, None]
                d0 = wigner_d_from_tables(idx, cp, sp, 0)[None, :]
                mats[0] += phase * d0
                if order >= 1:
                    d1 = wigner_d_from_tables(idx, cp, sp, 1)[None, :]
                    mats[1] += phase * d1
                    mats[2] += (-1j * m) * phase * d0
                if order >= 2:
                    mats[3] += phase * wigner_d_from_tables(idx, cp, sp, 2)[None, :]
                    mats[4] += (-1j * m) * phase * d1
                    mats[5] += (-(m * m)) * phase * d0

        cosp, sinp = np.cos(s * psis), np.sin(s * psis)

        def outer(mat, extra=1.0 + 0.0j):
            m = mat * extra
            # Re(m e^{-is psi}) = Re(m) cos(s psi) + Im(m) sin(s psi)
            return np.multiply.outer(m.real, cosp) + np.multiply.outer(m.imag, sinp)

        out = {"f": outer(mats[0])}
        if order >= 1:
            out["fp"] = outer(mats[2])
            out["ft"] = outer(mats[1])
            out["fs"] = outer(mats[0], -1j * s)
        if order >= 2:
            out["fpp"] = outer(mats[5])
            out["fpt"] = outer(mats[4])
            out["fps"] = outer(mats[2], -1j * s)
            out["ftt"] = outer(mats[3])
            out["fts"] = outer(mats[1], -1j * s)
            out["fss"] = outer(mats[0], -(s * s))
        return out

    def psi_line_amplitudes(self, phis, thetas):
        """Complex amplitudes W(phi, theta) with X = W e^{-i s psi}.

        Along each psi line the real field is exactly |W| cos(s psi - arg W),
        which the crossing-count area estimator exploits.
        """
        phis = np.asarray(phis, dtype=float)
        thetas = np.asarray(thetas, dtype=float)
        out = np.zeros((len(phis), len(thetas)), dtype=complex)
        for l, c in self.spec.coeffs.items():
            g = self.gammas[l]
            for m in range(-l, l + 1):
                beta = c * g[m + l]
                phase = beta * np.exp(-1j * m * phis)[:, None]
                out += phase * wigner_d(WignerIndex(l, m, self.spec.s), thetas)[None, :]
        return out

    def grad_scale(self):
        """Root mean square chart gradient length, sqrt(2 xi^2 + s^2)."""
        return float(np.sqrt(2.0 * self.spec.xi_squared() + self.spec.s**2))

    # -- point-wise conveniences ----------------------------------------------

    def evaluate_complex(self, p: EulerPoint):
        return complex(self.eval_many(p.phi, p.theta, p.psi)["f_complex"])

    def evaluate(self, p: EulerPoint):
        return float(self.eval_many(p.phi, p.theta, p.psi)["f"])

    def chart_gradient(self, p: EulerPoint):
        d = self.eval_many(p.phi, p.theta, p.psi, order=1)
        return np.array([float(d["fp"]), float(d["ft"]), float(d["fs"])])

    def chart_hessian_raw(self, p: EulerPoint):
        d = self.eval_many(p.phi, p.theta, p.psi, order=2)
        return np.array(
            [
                [float(d["fpp"]), float(d["fpt"]), float(d["fps"])],
                [float(d["fpt"]), float(d["ftt"]), float(d["fts"])],
                [float(d["fps"]), float(d["fts"]), float(d["fss"])],
            ]
        )

    # -- persistence -----------------------------------------------------------

    def to_json_dict(self):
        seed = self.seed
        if not isinstance(seed, (int, np.integer)):
            seed = list(int(x) for x in seed)
        return {"spec": self.spec.to_json_dict(), "seed": seed}

    @classmethod
    def from_json_dict(cls, d):
        seed = d["seed"]
        if isinstance(seed, list):
            seed = tuple(seed)
        return cls(SpectrumSpec.from_json_dict(d["spec"]), seed)

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))


def sample(spec: SpectrumSpec, seed) -> FieldRealization:
    """Draw the realization determined by (spec, seed)."""
    return FieldRealization(spec, seed)


def riemannian_hessian(r, p: EulerPoint, metric: so3geom.LeftInvariantMetric):
    """Hessian with respect to a left-invariant metric:
    Hess_ij = d_i d_j f - Gamma^k_{ij} d_k f.

    At a critical point of f the correction vanishes and this equals the raw
    chart Hessian for every metric.
    """
    raw = r.chart_hessian_raw(p)
    grad = r.chart_gradient(p)
    gam = so3geom.christoffel(metric, p.theta)
    return raw - np.einsum("k,kij->ij", grad, gam)

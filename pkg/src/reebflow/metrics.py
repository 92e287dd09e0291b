"""Finsler metrics on surfaces: norms, duals, Legendre maps, fiber volumes.

A metric here is a strongly convex positively 1-homogeneous norm F(x, v) on
tangent planes of a chart.  Four families are built in:

* Riemannian: F = sqrt(v.G(x)v) for a positive matrix field G;
* conformal: G(x) = exp(2*w(x)) G0(x), handled as a Riemannian field;
* Randers: F = sqrt(v.h(x)v) + b(x).v with |b|_{h*} < 1 (possibly asymmetric);
* dual-defined: F*(x, p) given directly, with F recovered by support solves
  (used by the localized perturbations, which are natural on the cotangent
  side).

The dual norm is the support function of the unit ball,

    F*(x, p) = max_theta  p.u(theta) / F(x, u(theta)),   u(theta) unit circle,

solved by a coarse scan, golden-section bracketing and a Newton polish to
1e-12 in theta.  Riemannian and Randers metrics carry closed-form duals
(through the travel-time/wind correspondence for Randers) which serve as fast
paths; the angular solver doubles as an independent cross-check in the tests.

Derivatives of coefficient fields default to 5-point central differences
(absolute accuracy around 1e-13 for smooth O(1) coefficients), with analytic
overrides for the constant and revolution families.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .charts import ChartAtlas, RevolutionProfile, flat_torus_atlas, revolution_atlas
from .errors import (
    DegenerateFiber,
    MaximizerNotFound,
    NotPositiveDefinite,
    NotUnitSpeed,
    OutsideChart,
    QuadratureUnderResolved,
    ZeroCovector,
    ZeroVector,
)

ZERO_TOL = 1e-14
ANGLE_TOL = 1e-12
EIG_FLOOR = 1e-10


def inv2(M: np.ndarray) -> np.ndarray:
    """Hand-rolled 2x2 inverse (hot path; avoids LAPACK call overhead)."""
    a, b = M[0]
    c, d = M[1]
    det = a * d - b * c
    return np.array([[d, -b], [-c, a]]) / det


def det2(M: np.ndarray) -> float:
    return float(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0])


# ---------------------------------------------------------------------------
# coefficient fields
# ---------------------------------------------------------------------------

_FD_STEP = 5e-4
_FD_W = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0  # 5-point central weights


def _fd_grad(fn: Callable[[np.ndarray], np.ndarray], q: np.ndarray, h: float = _FD_STEP):
    """d(fn)/dq_i by 5-point central differences, stacked along axis 0."""
    out = []
    for i in range(2):
        e = np.zeros(2)
        e[i] = 1.0
        vals = [np.asarray(fn(q + s * h * e)) for s in (-2.0, -1.0, 1.0, 2.0)]
        out.append(sum(w * v for w, v in zip(_FD_W, vals)) / h)
    return np.stack(out, axis=0)


class MatrixField:
    """Symmetric 2x2 coefficient field with first derivatives."""

    def __init__(self, value: Callable[[np.ndarray], np.ndarray],
                 deriv: Callable[[np.ndarray], np.ndarray] | None = None,
                 constant: bool = False, tag: str = "matrix"):
        self._value = value
        self._deriv = deriv
        self.constant = constant
        self.tag = tag

    def value(self, q: np.ndarray) -> np.ndarray:
        return np.asarray(self._value(q), dtype=float)

    def deriv(self, q: np.ndarray) -> np.ndarray:
        """Stack [dM/dq1, dM/dq2], shape (2, 2, 2)."""
        if self.constant:
            return np.zeros((2, 2, 2))
        if self._deriv is not None:
            return np.asarray(self._deriv(q), dtype=float)
        return _fd_grad(self._value, q)


class VectorField2:
    """Covector coefficient field (for Randers drift forms)."""

    def __init__(self, value: Callable[[np.ndarray], np.ndarray],
                 deriv: Callable[[np.ndarray], np.ndarray] | None = None,
                 constant: bool = False, tag: str = "form"):
        self._value = value
        self._deriv = deriv
        self.constant = constant
        self.tag = tag

    def value(self, q: np.ndarray) -> np.ndarray:
        return np.asarray(self._value(q), dtype=float)

    def deriv(self, q: np.ndarray) -> np.ndarray:
        """Stack [db/dq1, db/dq2], shape (2, 2)."""
        if self.constant:
            return np.zeros((2, 2))
        if self._deriv is not None:
            return np.asarray(self._deriv(q), dtype=float)
        return _fd_grad(self._value, q)


def constant_matrix(M: Sequence[Sequence[float]]) -> MatrixField:
    arr = np.asarray(M, dtype=float)
    if arr.shape != (2, 2) or abs(arr[0, 1] - arr[1, 0]) > 1e-15:
        raise NotPositiveDefinite("coefficient matrix must be symmetric 2x2")
    return MatrixField(lambda q: arr, constant=True, tag=f"const{arr.tolist()}")


def constant_form(b: Sequence[float]) -> VectorField2:
    arr = np.asarray(b, dtype=float)
    return VectorField2(lambda q: arr, constant=True, tag=f"const{arr.tolist()}")


def revolution_matrix(profile: RevolutionProfile) -> MatrixField:
    """G = diag(1, r(u)^2) with the analytic u-derivative."""

    def value(q):
        r = profile.r(q[0])
        return np.array([[1.0, 0.0], [0.0, r * r]])

    def deriv(q):
        r, dr = profile.r(q[0]), profile.dr(q[0])
        d = np.zeros((2, 2, 2))
        d[0, 1, 1] = 2.0 * r * dr
        return d

    return MatrixField(value, deriv, tag=f"revolution:{profile.name}")


# ---------------------------------------------------------------------------
# metric base class
# ---------------------------------------------------------------------------

class FinslerMetric:
    """Common interface for all metric families.

    Subclasses implement the tangent side (``F``, ``dF_dv``, ``dF_dq``) or
    mark themselves ``dual_primary`` and implement ``dual_value``,
    ``dual_grad_p``, ``dual_grad_q`` instead; the base class supplies the
    missing side through support solves and envelope differentiation.
    """

    kind = "finsler"
    symmetric = True
    dual_primary = False

    def __init__(self, atlas: ChartAtlas, name: str):
        self.atlas = atlas
        self.name = name

    # -- tangent side (override in tangent-primary families) -----------------

    def F(self, q: np.ndarray, v: np.ndarray) -> float:
        if not self.dual_primary:
            raise NotImplementedError
        val, pstar = self._support_over_covectors(q, v)
        return val

    def dF_dv(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        if not self.dual_primary:
            raise NotImplementedError
        # Envelope: F(q,v) = max{ v.p : F*(q,p) = 1 } is attained at a unique
        # covector p*, and dF/dv = p*.
        _, pstar = self._support_over_covectors(q, v)
        return pstar

    def dF_dq(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        if not self.dual_primary:
            raise NotImplementedError
        val, pstar = self._support_over_covectors(q, v)
        return -val * self.dual_grad_q(q, pstar)

    # -- dual side ------------------------------------------------------------

    def dual_value(self, q: np.ndarray, p: np.ndarray) -> float:
        return self.dual(q, p)[0]

    def dual(self, q: np.ndarray, p: np.ndarray) -> tuple[float, np.ndarray]:
        """Return (F*(q,p), v*) with v* the unit-F support maximizer.

        v* is also the p-gradient of F*, by the envelope theorem.
        """
        theta, val = self._angular_maximize(
            lambda th: self._ray_value(q, p, th),
            lambda th: self._ray_slope(q, p, th),
        )
        u = np.array([math.cos(theta), math.sin(theta)])
        return val, u / self.F(q, u)

    def dual_grad_q(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        """dF*/dq at fixed p; envelope theorem through the maximizer."""
        val, vstar = self.dual(q, p)
        return -val * self.dF_dq(q, vstar)

    # -- fundamental tensor -----------------------------------------------------

    def fundamental(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Hessian of F^2/2 in v; generic central-difference fallback."""
        h = 1e-5 * float(np.linalg.norm(v))

        def e(vv):
            f = self.F(q, vv)
            return 0.5 * f * f

        g = np.empty((2, 2))
        e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        g[0, 0] = (e(v + h * e1) - 2 * e(v) + e(v - h * e1)) / (h * h)
        g[1, 1] = (e(v + h * e2) - 2 * e(v) + e(v - h * e2)) / (h * h)
        g[0, 1] = g[1, 0] = (
            e(v + h * (e1 + e2)) - e(v + h * (e1 - e2))
            - e(v - h * (e1 - e2)) + e(v - h * (e1 + e2))
        ) / (4 * h * h)
        return 0.5 * (g + g.T)

    # -- angular support machinery ----------------------------------------------

    def _ray_value(self, q, p, theta):
        u = np.array([math.cos(theta), math.sin(theta)])
        return float(p @ u) / self.F(q, u)

    def _ray_slope(self, q, p, theta):
        u = np.array([math.cos(theta), math.sin(theta)])
        du = np.array([-u[1], u[0]])
        f = self.F(q, u)
        return (float(p @ du) * f - float(p @ u) * float(self.dF_dv(q, u) @ du)) / (f * f)

    @staticmethod
    def _angular_maximize(value, slope, n_scan: int = 48) -> tuple[float, float]:
        """Maximize ``value(theta)`` on the circle to ANGLE_TOL in theta."""
        thetas = np.linspace(0.0, 2.0 * math.pi, n_scan, endpoint=False)
        vals = [value(t) for t in thetas]
        if not all(math.isfinite(x) for x in vals):
            raise MaximizerNotFound("support scan produced non-finite values")
        k = int(np.argmax(vals))
        step = 2.0 * math.pi / n_scan
        a, b = thetas[k] - step, thetas[k] + step
        # golden-section shrink to a tight bracket
        inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
        c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
        fc, fd = value(c), value(d)
        while b - a > 1e-4:
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - inv_phi * (b - a)
                fc = value(c)
            else:
                a, c, fc = c, d, fd
                d = a + inv_phi * (b - a)
                fd = value(d)
        theta = 0.5 * (a + b)
        # Newton polish on the slope
        for _ in range(60):
            s = slope(theta)
            h = 1e-6
            curv = (slope(theta + h) - slope(theta - h)) / (2 * h)
            if curv >= 0 or not math.isfinite(curv):
                break
            dt = -s / curv
            dt = max(-0.1, min(0.1, dt))
            theta += dt
            if abs(dt) < ANGLE_TOL:
                return theta, value(theta)
        # golden fallback to full precision
        while b - a > ANGLE_TOL:
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - inv_phi * (b - a)
                fc = value(c)
            else:
                a, c, fc = c, d, fd
                d = a + inv_phi * (b - a)
                fd = value(d)
        theta = 0.5 * (a + b)
        return theta, value(theta)

    def _support_over_covectors(self, q, v) -> tuple[float, np.ndarray]:
        """max{ v.p : F*(q,p) = 1 } and its maximizer, for dual-primary metrics."""
        theta, val = self._angular_maximize(
            lambda th: self._dual_ray_value(q, v, th),
            lambda th: self._dual_ray_slope(q, v, th),
        )
        w = np.array([math.cos(theta), math.sin(theta)])
        return val, w / self.dual_value(q, w)

    def _dual_ray_value(self, q, v, theta):
        w = np.array([math.cos(theta), math.sin(theta)])
        return float(v @ w) / self.dual_value(q, w)

    def _dual_ray_slope(self, q, v, theta):
        w = np.array([math.cos(theta), math.sin(theta)])
        dw = np.array([-w[1], w[0]])
        f = self.dual_value(q, w)
        return (float(v @ dw) * f - float(v @ w) * float(self.dual_grad_p(q, w) @ dw)) / (f * f)

    def dual_grad_p(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        return self.dual(q, p)[1]

    def dual_full(self, q: np.ndarray, p: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """(F*, dF*/dp, dF*/dq) in one pass; families override for speed."""
        val, vstar = self.dual(q, p)
        return val, vstar, self.dual_grad_q(q, p)

    # -- vectorized dual values on an angle grid (polar fiber quadrature) -----

    def dual_values_on_angles(self, q: np.ndarray, thetas: np.ndarray) -> np.ndarray:
        return np.array([self.dual_value(q, np.array([math.cos(t), math.sin(t)]))
                         for t in thetas])

    # -- identification ----------------------------------------------------------

    def describe(self) -> str:
        return f"{self.kind}:{self.name}"

    def metric_hash(self) -> str:
        return hashlib.sha256(self.describe().encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Riemannian / conformal
# ---------------------------------------------------------------------------

class RiemannianMetric(FinslerMetric):
    """F = sqrt(v.G(x)v); everything is closed-form."""

    kind = "riemannian"

    def __init__(self, atlas: ChartAtlas, G: MatrixField, name: str):
        super().__init__(atlas, name)
        self.G = G

    def tensor(self, q) -> np.ndarray:
        return self.G.value(q)

    def tensor_inv(self, q) -> np.ndarray:
        return np.linalg.inv(self.G.value(q))

    def F(self, q, v):
        return math.sqrt(max(float(v @ self.G.value(q) @ v), 0.0))

    def dF_dv(self, q, v):
        Gv = self.G.value(q) @ v
        return Gv / math.sqrt(float(v @ Gv))

    def dF_dq(self, q, v):
        dG = self.G.deriv(q)
        f = self.F(q, v)
        return np.array([float(v @ dG[i] @ v) for i in range(2)]) / (2.0 * f)

    def fundamental(self, q, v):
        return self.G.value(q)

    def dual(self, q, p):
        Gi = self.tensor_inv(q)
        val = math.sqrt(float(p @ Gi @ p))
        return val, (Gi @ p) / val

    def dual_grad_q(self, q, p):
        Gi = self.tensor_inv(q)
        dG = self.G.deriv(q)
        val = math.sqrt(float(p @ Gi @ p))
        w = Gi @ p
        return np.array([-float(w @ dG[i] @ w) for i in range(2)]) / (2.0 * val)

    def dual_full(self, q, p):
        Gi = inv2(self.G.value(q))
        w = Gi @ p
        val = math.sqrt(float(p @ w))
        dG = self.G.deriv(q)
        grad_q = np.array([-float(w @ dG[i] @ w) for i in range(2)]) / (2.0 * val)
        return val, w / val, grad_q

    def dual_values_on_angles(self, q, thetas):
        Gi = self.tensor_inv(q)
        us = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
        return np.sqrt(np.einsum("ki,ij,kj->k", us, Gi, us))

    def fiber_area_closed(self, q) -> float:
        """Euclidean area of {F*(q,.) <= 1}: an ellipse, pi*sqrt(det G)."""
        return math.pi * math.sqrt(float(np.linalg.det(self.G.value(q))))

    def describe(self) -> str:
        return f"{self.kind}:{self.name}:{self.G.tag}"


def riemannian_torus(G: Sequence[Sequence[float]] | MatrixField,
                     periods: tuple[float, float] = (1.0, 1.0),
                     name: str = "riemannian_torus",
                     two_charts: bool = False) -> RiemannianMetric:
    field = G if isinstance(G, MatrixField) else constant_matrix(G)
    return RiemannianMetric(flat_torus_atlas(periods, two_charts), field, name)


def conformal_torus(exponent: Callable[[np.ndarray], float],
                    base: Sequence[Sequence[float]] | None = None,
                    periods: tuple[float, float] = (1.0, 1.0),
                    name: str = "conformal_torus") -> RiemannianMetric:
    """G(q) = exp(2*exponent(q)) * G0 on a flat torus chart."""
    G0 = np.eye(2) if base is None else np.asarray(base, dtype=float)

    def value(q):
        return math.exp(2.0 * exponent(q)) * G0

    return RiemannianMetric(flat_torus_atlas(periods), MatrixField(value, tag=f"conformal:{name}"), name)


def revolution_metric(profile: RevolutionProfile, name: str | None = None) -> RiemannianMetric:
    """Round metric du^2 + r(u)^2 dv^2 of a surface of revolution."""
    return RiemannianMetric(revolution_atlas(profile), revolution_matrix(profile),
                            name or f"revolution_{profile.name}")


# ---------------------------------------------------------------------------
# Randers
# ---------------------------------------------------------------------------

class RandersMetric(FinslerMetric):
    """F = sqrt(v.h v) + b.v, strongly convex iff |b|_{h*} < 1.

    The dual is closed-form through the wind correspondence: with
    A = h - b b^T, lam = 1 - b.h^{-1}b = det(A)/det(h), the data
    g = lam*A, W = -A^{-1} b satisfy F*(p) = sqrt(p.g^{-1}p) + p.W.
    """

    kind = "randers"
    symmetric = False

    def __init__(self, atlas: ChartAtlas, h: MatrixField, b: VectorField2, name: str,
                 coeffs: Callable[[np.ndarray], tuple] | None = None):
        super().__init__(atlas, name)
        self.h = h
        self.b = b
        self._coeffs_fn = coeffs

    def coeffs(self, q) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(h, b, dh, db) at q in one pass (hot path for the flow field)."""
        if self._coeffs_fn is not None:
            return self._coeffs_fn(q)
        return self.h.value(q), self.b.value(q), self.h.deriv(q), self.b.deriv(q)

    # tangent side ---------------------------------------------------------

    def _alpha(self, q, v):
        return math.sqrt(max(float(v @ self.h.value(q) @ v), 0.0))

    def F(self, q, v):
        return self._alpha(q, v) + float(self.b.value(q) @ v)

    def dF_dv(self, q, v):
        hv = self.h.value(q) @ v
        return hv / math.sqrt(float(v @ hv)) + self.b.value(q)

    def dF_dq(self, q, v):
        dh = self.h.deriv(q)
        db = self.b.deriv(q)
        a = self._alpha(q, v)
        return np.array([
            float(v @ dh[i] @ v) / (2.0 * a) + float(db[i] @ v) for i in range(2)
        ])

    def fundamental(self, q, v):
        h = self.h.value(q)
        b = self.b.value(q)
        a = math.sqrt(float(v @ h @ v))
        ell = (h @ v) / a
        f = a + float(b @ v)
        grad = ell + b
        return (f / a) * (h - np.outer(ell, ell)) + np.outer(grad, grad)

    # wind data and the closed-form dual -------------------------------------

    def wind_data(self, q) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(g, g^{-1}, W) of the drift representation at q."""
        h = self.h.value(q)
        b = self.b.value(q)
        A = h - np.outer(b, b)
        lam = float(np.linalg.det(A) / np.linalg.det(h))
        if lam <= 0:
            raise NotPositiveDefinite(f"drift form too large at q={q}: lam={lam:.3e}")
        g = lam * A
        W = -np.linalg.solve(A, b)
        return g, np.linalg.inv(g), W

    def dual(self, q, p):
        _, gi, W = self.wind_data(q)
        r = math.sqrt(float(p @ gi @ p))
        val = r + float(p @ W)
        return val, (gi @ p) / r + W

    def dual_grad_q(self, q, p):
        val, vstar = self.dual(q, p)
        return -val * self.dF_dq(q, vstar)

    def dual_full(self, q, p):
        h, b, dh, db = self.coeffs(q)
        A = h - np.outer(b, b)
        lam = det2(A) / det2(h)
        if lam <= 0:
            raise NotPositiveDefinite(f"drift form too large at q={q}: lam={lam:.3e}")
        Ai = inv2(A)
        gi = Ai / lam
        W = -(Ai @ b)
        w = gi @ p
        r = math.sqrt(float(p @ w))
        val = r + float(p @ W)
        vstar = w / r + W
        hv = h @ vstar
        a = math.sqrt(float(vstar @ hv))
        grad_q = np.array([
            float(vstar @ dh[i] @ vstar) / (2.0 * a) + float(db[i] @ vstar)
            for i in range(2)
        ])
        return val, vstar, -val * grad_q

    def dual_values_on_angles(self, q, thetas):
        _, gi, W = self.wind_data(q)
        us = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
        return np.sqrt(np.einsum("ki,ij,kj->k", us, gi, us)) + us @ W

    def fiber_area_closed(self, q) -> float:
        """Exact ellipse area of the dual disk {F* <= 1}."""
        _, gi, W = self.wind_data(q)
        Q = gi - np.outer(W, W)
        tau = 1.0 + float(W @ np.linalg.solve(Q, W))
        return math.pi * tau / math.sqrt(float(np.linalg.det(Q)))

    def describe(self) -> str:
        return f"{self.kind}:{self.name}:{self.h.tag}:{self.b.tag}"


def randers_torus(h: Sequence[Sequence[float]] | MatrixField,
                  b: Sequence[float] | VectorField2,
                  periods: tuple[float, float] = (1.0, 1.0),
                  name: str = "randers_torus") -> RandersMetric:
    hf = h if isinstance(h, MatrixField) else constant_matrix(h)
    bf = b if isinstance(b, VectorField2) else constant_form(b)
    m = RandersMetric(flat_torus_atlas(periods), hf, bf, name)
    m.wind_data(np.zeros(2))  # validates |b| < 1 at the origin for constants
    return m


def zermelo_metric(atlas: ChartAtlas, g: MatrixField, wind: VectorField2,
                   name: str) -> RandersMetric:
    """Randers metric of travel time in base metric g under drift field `wind`.

    F(v) is the positive root of |v - F W|_g = F, i.e. unit travel time with
    own speed 1 (in g) plus the drift; requires |W|_g < 1.
    """

    def pack(q):
        """(h, b) and their analytic chart derivatives, chained from (g, W)."""
        G = g.value(q)
        W = wind.value(q)
        gw = G @ W
        lam = 1.0 - float(W @ gw)
        if lam <= 0:
            raise NotPositiveDefinite(f"drift faster than own speed at q={q}")
        h = G / lam + np.outer(gw, gw) / (lam * lam)
        b = -gw / lam
        dG = g.deriv(q)
        dW = wind.deriv(q)
        dh = np.empty((2, 2, 2))
        db = np.empty((2, 2))
        for i in range(2):
            dgw = dG[i] @ W + G @ dW[i]
            dlam = -(2.0 * float(gw @ dW[i]) + float(W @ dG[i] @ W))
            dh[i] = (dG[i] / lam - G * (dlam / lam ** 2)
                     + (np.outer(dgw, gw) + np.outer(gw, dgw)) / lam ** 2
                     - np.outer(gw, gw) * (2.0 * dlam / lam ** 3))
            db[i] = -dgw / lam + gw * (dlam / lam ** 2)
        return h, b, dh, db

    hf = MatrixField(lambda q: pack(q)[0], lambda q: pack(q)[2],
                     tag=f"zermelo_h:{g.tag}:{wind.tag}")
    bf = VectorField2(lambda q: pack(q)[1], lambda q: pack(q)[3],
                      tag=f"zermelo_b:{g.tag}:{wind.tag}")
    return RandersMetric(atlas, hf, bf, name, coeffs=pack)


def rotating_sphere_metric(rho: float, u_margin: float = 1e-3) -> RandersMetric:
    """Round sphere with a rigid rotation drift rho * d/dv (0 < rho < 1).

    The two equatorial circles are closed orbits with periods 2*pi/(1 +- rho);
    this is the standard example of a metric with precisely two short closed
    geodesics.
    """
    from .charts import sphere_profile

    profile = sphere_profile()
    atlas = revolution_atlas(profile, u_margin)
    g = revolution_matrix(profile)
    wind = VectorField2(lambda q: np.array([0.0, rho]), constant=True, tag=f"rot:{rho!r}")
    m = zermelo_metric(atlas, g, wind, f"rotating_sphere:{rho!r}")
    m.rho = rho
    return m


# ---------------------------------------------------------------------------
# spec-facing operations
# ---------------------------------------------------------------------------

def _check_point(m: FinslerMetric, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    chart = m.atlas.chart
    for i in range(2):
        if not chart.periodic[i]:
            lo, hi = chart.bounds[i]
            if x[i] < lo or x[i] > hi:
                raise OutsideChart(
                    f"{chart.coord_names[i]}={x[i]:.6g} outside [{lo:.6g}, {hi:.6g}]")
    return x


def eval_metric(m: FinslerMetric, x: np.ndarray, v: np.ndarray) -> float:
    """F(x, v).  Raises ZeroVector below the zero threshold."""
    x = _check_point(m, x)
    v = np.asarray(v, dtype=float)
    if float(np.linalg.norm(v)) < ZERO_TOL:
        raise ZeroVector(f"|v| < {ZERO_TOL:g}")
    return m.F(x, v)


def fundamental_tensor(m: FinslerMetric, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Hessian of F^2/2 in v; positive definite on strongly convex metrics."""
    x = _check_point(m, x)
    v = np.asarray(v, dtype=float)
    if float(np.linalg.norm(v)) < ZERO_TOL:
        raise ZeroVector(f"|v| < {ZERO_TOL:g}")
    g = m.fundamental(x, v)
    lam = float(np.linalg.eigvalsh(g)[0])
    if lam < EIG_FLOOR:
        raise NotPositiveDefinite(f"fundamental tensor eigenvalue {lam:.3e} at x={x}")
    return g


def legendre(m: FinslerMetric, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Legendre image p = F(x,v) dF/dv(x,v); satisfies p.v = F^2."""
    x = _check_point(m, x)
    v = np.asarray(v, dtype=float)
    if float(np.linalg.norm(v)) < ZERO_TOL:
        raise ZeroVector(f"|v| < {ZERO_TOL:g}")
    return m.F(x, v) * m.dF_dv(x, v)


def dual_norm(m: FinslerMetric, x: np.ndarray, p: np.ndarray) -> float:
    """Support function F*(x,p) of the unit ball of F(x,.)."""
    x = _check_point(m, x)
    p = np.asarray(p, dtype=float)
    if float(np.linalg.norm(p)) < ZERO_TOL:
        raise ZeroCovector(f"|p| < {ZERO_TOL:g}")
    return m.dual_value(x, p)


def legendre_inverse(m: FinslerMetric, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """The vector v with legendre(m, x, v) = p; equals F*(p) times the maximizer."""
    x = _check_point(m, x)
    p = np.asarray(p, dtype=float)
    if float(np.linalg.norm(p)) < ZERO_TOL:
        raise ZeroCovector(f"|p| < {ZERO_TOL:g}")
    val, vstar = m.dual(x, p)
    return val * vstar


def hilbert_pair(m: FinslerMetric, x: np.ndarray, v: np.ndarray, w: np.ndarray,
                 unit_tol: float = 1e-8) -> float:
    """Contact pairing dF/dv(x,v) . w for unit v (the tangent-side 1-form)."""
    x = _check_point(m, x)
    v = np.asarray(v, dtype=float)
    f = m.F(x, v)
    if abs(f - 1.0) > unit_tol:
        raise NotUnitSpeed(f"F(x,v) = {f!r} is not 1 within {unit_tol:g}")
    return float(m.dF_dv(x, v) @ np.asarray(w, dtype=float))


def fiber_area(m: FinslerMetric, x: np.ndarray, n: int = 256,
               method: str = "polar") -> float:
    """Euclidean area of the dual unit disk {p : F*(x,p) <= 1}.

    ``polar`` integrates (1/2) r(phi)^2 dphi with r = 1/F* on the angle grid
    (trapezoid on a periodic integrand, so effectively spectral); ``closed``
    uses the per-family ellipse formula where one exists.
    """
    x = _check_point(m, x)
    if method == "closed":
        fn = getattr(m, "fiber_area_closed", None)
        if fn is None:
            raise DegenerateFiber(f"no closed-form fiber area for family {m.kind}")
        return float(fn(x))
    if method != "polar":
        raise ValueError(f"unknown fiber area method {method!r}")
    thetas = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    vals = np.asarray(m.dual_values_on_angles(x, thetas), dtype=float)
    if not np.all(np.isfinite(vals)) or np.min(vals) <= 0:
        raise DegenerateFiber(f"dual norm not positive on fiber at x={x}")
    r = 1.0 / vals
    if float(np.max(r) / np.min(r)) > 1e6:
        raise DegenerateFiber("fiber aspect ratio beyond 1e6")
    return float(0.5 * np.sum(r * r) * (2.0 * math.pi / n))


def fiber_area_montecarlo(m: FinslerMetric, x: np.ndarray, n_samples: int,
                          seed: int, chunk: int = 2_000_000) -> float:
    """Rejection-sampling estimate of the dual disk area (an independent route).

    Samples uniformly in the bounding box of the disk read off a coarse polar
    radius scan, then counts F* <= 1.  Standard error ~ sqrt(A(B-A)/n)/1 with
    B the box area.
    """
    x = _check_point(m, x)
    thetas = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
    r = 1.0 / np.asarray(m.dual_values_on_angles(x, thetas))
    pad = 1.05 * float(np.max(r))
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        pts = rng.uniform(-pad, pad, size=(k, 2))
        vals = _dual_values_at_points(m, x, pts)
        hits += int(np.count_nonzero(vals <= 1.0))
        done += k
    box = (2.0 * pad) ** 2
    return box * hits / n_samples


def _dual_values_at_points(m: FinslerMetric, x, pts: np.ndarray) -> np.ndarray:
    """F*(x, p) for an array of covectors, vectorized for the closed families."""
    if isinstance(m, RandersMetric):
        _, gi, W = m.wind_data(x)
        return np.sqrt(np.einsum("ki,ij,kj->k", pts, gi, pts)) + pts @ W
    if isinstance(m, RiemannianMetric):
        Gi = m.tensor_inv(x)
        return np.sqrt(np.einsum("ki,ij,kj->k", pts, Gi, pts))
    return np.array([m.dual_value(x, p) for p in pts])


def surface_integral(m: FinslerMetric, f: Callable[[np.ndarray], float],
                     n: tuple[int, int] = (256, 256), tol: float | None = 1e-9,
                     weight: str = "holonomy", fiber_method: str = "polar") -> float:
    """Integral of f against the metric's invariant volume on the surface.

    The volume density is fiber_area(x)/pi per unit chart area (normalized so
    a Riemannian metric integrates sqrt(det G), the usual area form).  With
    ``weight='lebesgue'`` the plain chart Lebesgue integral is returned.
    ``fiber_method`` selects the fiber-area route ('polar' quadrature or the
    'closed' determinant formula), which lets callers cross-check the two.
    Periodic axes use the trapezoid rule (spectral accuracy), bounded axes use
    Simpson; both grids are refined once and compared when ``tol`` is set,
    raising QuadratureUnderResolved on disagreement.
    """
    x0 = _grid_axis(m, 0, n[0])
    x1 = _grid_axis(m, 1, n[1])

    def density(q):
        val = f(q)
        if weight == "holonomy":
            val *= fiber_area(m, q, method=fiber_method) / math.pi
        return val

    coarse = _integrate_grid(m, density, x0[::2], x1[::2])
    fine = _integrate_grid(m, density, x0, x1)
    if tol is not None and abs(fine - coarse) > tol * max(1.0, abs(fine)):
        raise QuadratureUnderResolved(
            f"refinement moved the integral by {abs(fine - coarse):.3e} "
            f"(> {tol:g} relative) at n={n}")
    return fine


def _grid_axis(m: FinslerMetric, axis: int, n: int) -> np.ndarray:
    chart = m.atlas.chart
    if chart.periodic[axis]:
        lo = 0.0
        hi = chart.periods[axis]
        return np.linspace(lo, hi, n, endpoint=False)
    lo, hi = chart.bounds[axis]
    inset = 1e-6 * (hi - lo)
    if n % 2 == 0:
        n += 1  # Simpson wants an odd node count
    return np.linspace(lo + inset, hi - inset, n)


def _axis_weights(chart, axis: int, nodes: np.ndarray) -> np.ndarray:
    if chart.periodic[axis]:
        w = np.full(nodes.size, chart.periods[axis] / nodes.size)
        return w
    h = nodes[1] - nodes[0]
    w = np.ones(nodes.size)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def _integrate_grid(m, density, x0, x1) -> float:
    chart = m.atlas.chart
    w0 = _axis_weights(chart, 0, x0)
    w1 = _axis_weights(chart, 1, x1)
    total = 0.0
    for a, wa in zip(x0, w0):
        row = 0.0
        for b, wb in zip(x1, w1):
            row += wb * density(np.array([a, b]))
        total += wa * row
    return total


def metric_distance(m1: FinslerMetric, m2: FinslerMetric, n: int = 16) -> float:
    """sup |F1/F2 - 1| over a sample grid of points and directions."""
    chart = m1.atlas.chart
    xs = _grid_axis(m1, 0, n)
    ys = _grid_axis(m1, 1, n)
    thetas = np.linspace(0.0, 2.0 * math.pi, 16, endpoint=False)
    worst = 0.0
    for a in xs:
        for b in ys:
            q = np.array([a, b])
            for t in thetas:
                v = np.array([math.cos(t), math.sin(t)])
                worst = max(worst, abs(m1.F(q, v) / m2.F(q, v) - 1.0))
    return worst

"""Compactly supported metric perturbations in tubes around closed orbits.

The perturbed family is defined on the dual side,

    (F_s*)^2 (q, p) = (F*)^2 (q, p) + s * (A(q) p, p),

with A a symmetric matrix field supported in a tube around a closed
orbit.  A is prescribed by three scalar coefficient profiles in tube
coordinates (t1, t2): t2 is normalized orbit time, t1 the signed offset
along base-orthogonal normal lines, and the matrix entries are read in
the covector frame {V, P} of the tube (P the Legendre image of the unit
tangent of the family curve through the point, V the base-metric unit
conormal).  Two profile shapes are provided:

* the orbit-fixing 'a' profile  chi(t1) [[a1, a2 t1], [a2 t1, a3 t1^2]],
  whose entries vanish to the right order on the orbit so that the
  closed orbit survives every amplitude s, and
* the orbit-moving 'b' profile  chi(t1) [[b1, -b3], [-b3, 2 b2 t1]],
  a deliberate negative control whose first derivatives on the orbit do
  not vanish.

Coefficient profiles in t2 and the radial cutoff chi are the degree-7
smoothstep plateau bumps shared with the contact-tube model module.

The module also carries the first-order machinery: the gradient and
Hessian of h = -(A p, p)/2 on the unit cotangent level (the s-derivative
of the induced contact rescaling), the predicted s-derivative of a
Poincare map

    dP/ds = -P(0) int_window Y(t)^{-1} J Hess_xi(h)(t) Y(t) dt,

and a finite-orbit-set nondegenerification search built on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .charts import Chart
from .errors import (BudgetExhausted, ConvexityLost, FramePairingSingular,
                     NoConvergence, OutsideWindow, SelfIntersection,
                     WindowOutsideRegularSet, WindowTooWide)
from .errors import OutsideChart, PoleProximity
from .flow import integrate, reeb_rhs
from .local_model import plateau_bump
from .metrics import FinslerMetric, RandersMetric, RiemannianMetric, det2, inv2
from .orbits import ClosedOrbit
from .poincare import (UnitCotangentState, classify, decompose,
                       eigenvalue_margin, frame_at, poincare_map,
                       reduce_monodromy, variational_transport)

J2 = np.array([[0.0, -1.0], [1.0, 0.0]])

SHOULDER_FRAC = 0.5
TUBE_SAMPLES = 256
LOCATE_TOL = 1e-12
T1_STEP_FRAC = 2e-3   # radial 5-point stencil step, as a fraction of radius
T2_STEP = 2e-3        # orbit-time 5-point stencil step
CONVEXITY_GRID = 64


def _wrap01(x):
    return (x + 0.5) % 1.0 - 0.5


def _ref_quadratic(m, q):
    """Positive quadratic form used for normals and the V covector.

    The metric tensor for Riemannian families, the Riemannian part for
    Randers, and the fundamental tensor at a fixed direction otherwise.
    """
    if isinstance(m, RiemannianMetric):
        return m.tensor(q)
    if isinstance(m, RandersMetric):
        return m.coeffs(q)[0]
    return m.fundamental(q, np.array([1.0, 0.7]))


# ---------------------------------------------------------------------------
# tube coordinates
# ---------------------------------------------------------------------------

def _hermite(vals, slopes, n, x):
    """Cubic Hermite value and derivative on a uniform grid over [0, 1]."""
    j = min(int(x * n), n - 1)
    u = x * n - j
    c0, c1 = vals[j], vals[j + 1]
    m0, m1 = slopes[j] / n, slopes[j + 1] / n
    u2, u3 = u * u, u * u * u
    val = ((2 * u3 - 3 * u2 + 1) * c0 + (u3 - 2 * u2 + u) * m0
           + (-2 * u3 + 3 * u2) * c1 + (u3 - u2) * m1)
    dv = ((6 * u2 - 6 * u) * c0 + (3 * u2 - 4 * u + 1) * m0
          + (-6 * u2 + 6 * u) * c1 + (3 * u2 - 2 * u) * m1) * n
    return val, dv


@dataclass
class Tube:
    """Normal tube around a closed orbit, in chart coordinates.

    Centers are the unwrapped orbit samples on a uniform grid of the
    normalized time tau in [0, 1]; normals are unit in the reference
    quadratic form at the centers.  Both interpolate with catmull-rom
    cubics, which reproduce the chart-straight catalog orbits exactly.
    """

    chart: Chart
    orbit_id: str
    metric_hash: str
    period: float
    radius: float
    window: tuple[float, float]
    centers: np.ndarray        # (n+1, 2), unwrapped; last = first + displacement
    center_slopes: np.ndarray  # (n+1, 2), d(center)/d(tau)
    normals: np.ndarray        # (n+1, 2)
    normal_slopes: np.ndarray  # (n+1, 2)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return self.centers.shape[0] - 1

    def center(self, tau):
        return _hermite(self.centers, self.center_slopes, self.n, tau % 1.0)

    def normal(self, tau):
        return _hermite(self.normals, self.normal_slopes, self.n, tau % 1.0)

    def point(self, t1, tau):
        c, _ = self.center(tau)
        nu, _ = self.normal(tau)
        return self.chart.wrap(c + t1 * nu)

    def jacobian(self, t1, tau):
        """Columns d(point)/dt1, d(point)/dtau."""
        _, dc = self.center(tau)
        nu, dnu = self.normal(tau)
        return np.column_stack([nu, dc + t1 * dnu])

    def locate(self, q, guard=1.5):
        """Tube coordinates of a chart point, or None when outside.

        Newton on (t1, tau) against the wrapped residual, warm-started
        from the previous hit and falling back to the nearest center
        sample.  Points farther than the tube radius return None.
        """
        q = np.asarray(q, dtype=float)
        starts = []
        if "warm" in self._cache:
            starts.append(self._cache["warm"])
        d = q[None, :] - self.centers
        for i in range(2):
            if self.chart.periodic[i]:
                L = self.chart.periods[i]
                d[:, i] = (d[:, i] + 0.5 * L) % L - 0.5 * L
        j = int(np.argmin(np.einsum("ij,ij->i", d, d)))
        starts.append((0.0, j / self.n))
        for t1, tau in starts:
            hit = self._newton(q, t1, tau, guard)
            if hit is not None:
                self._cache["warm"] = hit
                return hit if abs(hit[0]) <= self.radius else None
        return None

    def _newton(self, q, t1, tau, guard):
        lim = guard * self.radius
        for _ in range(40):
            c, dc = self.center(tau)
            nu, dnu = self.normal(tau)
            r = self.chart.wrap_diff(q - (c + t1 * nu))
            if float(r @ r) < LOCATE_TOL * LOCATE_TOL:
                return float(t1), float(tau % 1.0)
            Jm = np.column_stack([nu, dc + t1 * dnu])
            det = det2(Jm)
            if abs(det) < 1e-12:
                return None
            step = inv2(Jm) @ r
            t1 += step[0]
            tau += step[1]
            if abs(t1) > 2.0 * lim:
                return None
        return None

    def frame(self, m, t1, tau):
        """Covector frame columns B = [V | P] at the tube point.

        P is the Legendre image of the family-curve direction, V the
        base-form unit conormal; both evaluated at the displaced point.
        """
        c, dc = self.center(tau)
        nu, dnu = self.normal(tau)
        q = self.chart.wrap(c + t1 * nu)
        sdot = dc + t1 * dnu
        P = m.dF_dv(q, sdot)
        Gr = _ref_quadratic(m, q)
        nn = nu / math.sqrt(float(nu @ Gr @ nu))
        V = Gr @ nn
        B = np.column_stack([V, P])
        if abs(det2(B)) < 1e-10:
            raise FramePairingSingular(
                f"tube covector frame degenerates at (t1={t1:.4g}, tau={tau:.4g})")
        return q, B


def _states_at(traj, targets):
    """Rows of a trajectory at requested times (exact step landings)."""
    idx = np.searchsorted(traj.times, np.asarray(targets) - 1e-12)
    out = []
    for t, i in zip(targets, idx):
        i = min(i, len(traj.times) - 1)
        if abs(traj.times[i] - t) > 1e-9 * max(1.0, traj.times[-1]):
            raise NoConvergence(f"trajectory has no sample at t={t!r}")
        out.append(traj.states[i])
    return np.array(out)


def build_tube(m, orbit, t0, eps_w, radius=0.15, n=TUBE_SAMPLES,
               tol=1e-11):
    """Normal tube with window (t0 - eps_w, t0 + eps_w) in orbit time.

    Validates that the window sits strictly inside (0, 1), that the tube
    over the window stays inside the chart's working region, and that no
    far part of the orbit re-enters the window tube (pairwise sample
    separation above the support radius).
    """
    t0, eps_w = float(t0), float(eps_w)
    if eps_w <= 0.0 or t0 - eps_w <= 0.0 or t0 + eps_w >= 1.0:
        raise WindowTooWide(
            f"window ({t0 - eps_w:.6g}, {t0 + eps_w:.6g}) must sit strictly "
            "inside (0, 1)")
    chart = m.atlas.chart
    T = orbit.period
    taus = np.arange(n + 1) / n
    traj = integrate(m, orbit.state, T, tol=tol, t_eval=list(taus[1:] * T))
    states = _states_at(traj, taus * T)
    qs, ps = states[:, :2], states[:, 2:]

    centers = np.empty_like(qs)
    centers[0] = qs[0]
    for j in range(n):
        centers[j + 1] = centers[j] + chart.wrap_diff(qs[j + 1] - qs[j])
    disp = centers[-1] - centers[0]

    # clockwise rotation of the base-form tangent image: the (0, 1) torus
    # direction gets the +q1 normal, so t1 = q1 - c there
    normals = np.empty_like(qs)
    for j in range(n + 1):
        v = m.dual_grad_p(qs[j], ps[j])
        Gr = _ref_quadratic(m, qs[j])
        gv = Gr @ v
        w = np.array([gv[1], -gv[0]])
        normals[j] = w / math.sqrt(float(w @ Gr @ w))
    normals[-1] = normals[0]

    def slopes(vals, shift):
        s = np.empty_like(vals)
        s[1:-1] = (vals[2:] - vals[:-2]) * (0.5 * n)
        s[0] = (vals[1] - (vals[-2] - shift)) * (0.5 * n)
        s[-1] = s[0]
        return s

    tube = Tube(chart=chart, orbit_id=orbit.orbit_id,
                metric_hash=m.metric_hash(), period=T, radius=radius,
                window=(t0, eps_w), centers=centers,
                center_slopes=slopes(centers, disp), normals=normals,
                normal_slopes=slopes(normals, np.zeros(2)))

    # chart-region check over the window tube
    for tau in np.linspace(t0 - eps_w, t0 + eps_w, 17):
        for t1 in (-radius, 0.0, radius):
            try:
                chart.check_inside(tube.point(t1, tau))
            except (OutsideChart, PoleProximity) as exc:
                raise WindowOutsideRegularSet(
                    f"window tube leaves the chart working region: {exc}")

    # re-entry check: far-time samples must clear the window tube.  The
    # tau exclusion absorbs same-strand proximity (the r-ball around a
    # window point covers about r/L of parameter time); the cap keeps
    # genuinely overlapping strands visible even for coarse radii.
    chart_length = float(np.sum(np.linalg.norm(np.diff(centers, axis=0),
                                               axis=1)))
    exclusion = min(0.25, 2.5 * radius / max(chart_length, 1e-12))
    in_window = np.abs(_wrap01(taus - t0)) <= eps_w
    far = np.abs(_wrap01(taus - t0)) > eps_w + exclusion
    for qi in qs[in_window]:
        for qj in qs[far]:
            if chart.distance(qi, qj) <= 1.05 * radius:
                raise SelfIntersection(
                    "orbit re-enters its window tube (sample separation "
                    f"{chart.distance(qi, qj):.4g} <= radius {radius:g})")
    return tube


# ---------------------------------------------------------------------------
# perturbation specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationSpec:
    """Coefficient data of one tube perturbation.

    ``peaks`` are the peak values (a1, a2, a3) or (b1, b2, b3) of the
    degree-7 plateau bumps in normalized orbit time; ``profile`` picks
    the orbit-fixing 'a' or orbit-moving 'b' matrix shape.
    """

    orbit_id: str
    profile: str
    peaks: tuple[float, float, float]
    window: tuple[float, float]
    radius: float
    tube: Tube
    shoulder_frac: float = SHOULDER_FRAC

    def __post_init__(self):
        if self.profile not in ("a", "b"):
            raise ValueError(f"unknown profile {self.profile!r}")

    def coeffs(self, tau):
        t0, eps = self.window
        chi = plateau_bump(tau, t0, eps, self.shoulder_frac * eps)
        return np.asarray(self.peaks, dtype=float) * chi

    def chi_radial(self, t1):
        return plateau_bump(t1, 0.0, self.radius,
                            self.shoulder_frac * self.radius, period=None)

    def atilde(self, t1, tau):
        c1, c2, c3 = self.coeffs(tau)
        chi = self.chi_radial(t1)
        if self.profile == "a":
            return chi * np.array([[c1, c2 * t1],
                                   [c2 * t1, c3 * t1 * t1]])
        return chi * np.array([[c1, -c3], [-c3, 2.0 * c2 * t1]])

    def entry_derivs(self, tau):
        """On-orbit entry data (A11, A12, dA12, dA22, d2A22) at t1 = 0.

        The radial cutoff is on its plateau there, so its derivatives
        drop out.
        """
        c1, c2, c3 = self.coeffs(tau)
        if self.profile == "a":
            return {"A11": c1, "A12": 0.0, "dA12": c2,
                    "dA22": 0.0, "d2A22": 2.0 * c3}
        return {"A11": c1, "A12": -c3, "dA12": 0.0,
                "dA22": 2.0 * c2, "d2A22": 0.0}

    # -- hooks used by PerturbedMetric ------------------------------------

    def smatrix(self, base, q):
        loc = self.tube.locate(q)
        if loc is None:
            return None
        return self._smatrix_at(base, *loc)

    def _smatrix_at(self, base, t1, tau):
        A = self.atilde(t1, tau)
        if not A.any():
            return np.zeros((2, 2))
        _, B = self.tube.frame(base, t1, tau)
        Bi = inv2(B)
        S = Bi.T @ A @ Bi
        return 0.5 * (S + S.T)

    def value_grad(self, base, q, p):
        """(p.Sp, Sp, d(p.Sp)/dq) at q; zeros outside the tube.

        The q-gradient chains of 5-point stencils in tube coordinates
        through the inverse tube jacobian, so no extra tube inversions
        are spent on the stencil points.
        """
        loc = self.tube.locate(q)
        if loc is None:
            return 0.0, np.zeros(2), np.zeros(2)
        t1, tau = loc
        t0, eps = self.window
        h1 = T1_STEP_FRAC * self.radius
        h2 = T2_STEP
        if abs(_wrap01(tau - t0)) > eps + 3.0 * h2:
            return 0.0, np.zeros(2), np.zeros(2)

        def u(tt1, ttau):
            return float(p @ self._smatrix_at(base, tt1, ttau) @ p)

        S0 = self._smatrix_at(base, t1, tau)
        u0 = float(p @ S0 @ p)
        du1 = (-u(t1 + 2 * h1, tau) + 8 * u(t1 + h1, tau)
               - 8 * u(t1 - h1, tau) + u(t1 - 2 * h1, tau)) / (12 * h1)
        du2 = (-u(t1, tau + 2 * h2) + 8 * u(t1, tau + h2)
               - 8 * u(t1, tau - h2) + u(t1, tau - 2 * h2)) / (12 * h2)
        Jm = self.tube.jacobian(t1, tau)
        grad_q = inv2(Jm).T @ np.array([du1, du2])
        return u0, S0 @ p, grad_q

    def tag(self):
        w = self.window
        return (f"{self.orbit_id}:{self.profile}"
                f":peaks=({self.peaks[0]:.17g},{self.peaks[1]:.17g},"
                f"{self.peaks[2]:.17g}):w=({w[0]:.17g},{w[1]:.17g})"
                f":r={self.radius:.17g}")


@dataclass(frozen=True)
class ConstantQuadratic:
    """Globally constant quadratic correction (for closed-form checks)."""

    S: np.ndarray

    def smatrix(self, base, q):
        return self.S

    def value_grad(self, base, q, p):
        return float(p @ self.S @ p), self.S @ p, np.zeros(2)

    def tag(self):
        flat = ",".join(f"{x:.17g}" for x in np.asarray(self.S).ravel())
        return f"constant:[{flat}]"

    orbit_id = "constant"
    profile = "constant"


# ---------------------------------------------------------------------------
# the perturbed metric
# ---------------------------------------------------------------------------

class PerturbedMetric(FinslerMetric):
    """Dual-primary metric (F*)^2 + sum_i s_i (A_i(q) p, p).

    Usable everywhere a FinslerMetric is: the tangent side comes from
    the generic support solve, the dual side is closed-form on top of
    the base metric.  Riemannian bases stay Riemannian (the dual tensor
    just shifts by the matrix field), symmetric bases stay symmetric
    (the correction is even in p).
    """

    kind = "perturbed"
    dual_primary = True

    def __init__(self, base, parts: Sequence[tuple[object, float]]):
        tags = ";".join(f"{spec.tag()}:s={s:.17g}" for spec, s in parts)
        super().__init__(base.atlas, f"{base.name}+[{tags}]")
        self.base = base
        self.parts = list(parts)
        self.symmetric = base.symmetric
        self._q_key = None
        self._q_val = None

    # -- dual side ----------------------------------------------------------

    def _quad(self, q, p):
        """(sum s p.Sp, sum s Sp, sum s d(p.Sp)/dq)."""
        val, sp, gq = 0.0, np.zeros(2), np.zeros(2)
        for spec, s in self.parts:
            if s == 0.0:
                continue
            u, spv, g = spec.value_grad(self.base, q, p)
            val += s * u
            sp += s * spv
            gq += s * g
        return val, sp, gq

    def _smatrix_total(self, q):
        """sum s S(q), memoized on the last base point (angular scans)."""
        key = (float(q[0]), float(q[1]))
        if key == self._q_key:
            return self._q_val
        tot = np.zeros((2, 2))
        for spec, s in self.parts:
            if s == 0.0:
                continue
            S = spec.smatrix(self.base, q)
            if S is not None:
                tot = tot + s * S
        self._q_key, self._q_val = key, tot
        return tot

    def dual_value(self, q, p):
        S = self._smatrix_total(q)
        base = self.base.dual_value(q, p)
        quad = float(p @ S @ p)
        if quad == 0.0:
            return base
        return math.sqrt(base * base + quad)

    def dual_full(self, q, p):
        b_val, b_vstar, b_gq = self.base.dual_full(q, p)
        u, sp, gq = self._quad(q, p)
        if u == 0.0 and not sp.any() and not gq.any():
            return b_val, b_vstar, b_gq
        val = math.sqrt(b_val * b_val + u)
        dp = (b_val * b_vstar + sp) / val
        dq = (b_val * b_gq + 0.5 * gq) / val
        return val, dp, dq

    def dual_grad_p(self, q, p):
        return self.dual_full(q, p)[1]

    def dual_grad_q(self, q, p):
        return self.dual_full(q, p)[2]

    def dual(self, q, p):
        val, dp, _ = self.dual_full(q, p)
        return val, dp

    def dual_values_on_angles(self, q, thetas):
        base = self.base.dual_values_on_angles(q, thetas)
        S = self._smatrix_total(q)
        if not S.any():
            return base
        pts = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
        quad = np.einsum("ki,ij,kj->k", pts, S, pts)
        return np.sqrt(base * base + quad)

    # -- tangent-side exact path for Riemannian bases -------------------------

    def dual_tensor(self, q):
        if not isinstance(self.base, RiemannianMetric):
            raise NotImplementedError("dual tensor is closed-form only over "
                                      "Riemannian bases")
        return self.base.tensor_inv(q) + self._smatrix_total(q)

    def fundamental(self, q, v):
        if isinstance(self.base, RiemannianMetric):
            return inv2(self.dual_tensor(q))
        return super().fundamental(q, v)

    def describe(self):
        return f"{self.kind}:{self.name}:{self.base.describe()}"


def perturbed_metric(m, spec, s, check_convexity=True):
    """Perturbed metric for a single spec, with a sampled convexity gate."""
    if check_convexity and s != 0.0:
        margin = convexity_margin(m, [(spec, s)])
        if margin <= 0.0:
            raise ConvexityLost(
                f"perturbed dual tensor loses positivity (sampled min "
                f"eigenvalue {margin:.3e} at s={s:g})")
    return PerturbedMetric(m, [(spec, s)])


# ---------------------------------------------------------------------------
# convexity sampling
# ---------------------------------------------------------------------------

def _dual_tensor_batch(m, q, thetas):
    """p-Hessian of (F*)^2/2 at unit angles; (k, 2, 2)."""
    k = len(thetas)
    if isinstance(m, RiemannianMetric):
        return np.broadcast_to(m.tensor_inv(q), (k, 2, 2))
    if isinstance(m, RandersMetric):
        _, gi, W = m.wind_data(q)
        pts = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
        gp = pts @ gi
        r = np.sqrt(np.einsum("ki,ki->k", pts, gp))
        fs = r + pts @ W
        grad = gp / r[:, None] + W[None, :]
        outer_g = np.einsum("ki,kj->kij", grad, grad)
        outer_p = np.einsum("ki,kj->kij", gp, gp)
        hess_r = gi[None] / r[:, None, None] - outer_p / (r ** 3)[:, None, None]
        return outer_g + fs[:, None, None] * hess_r
    out = np.empty((k, 2, 2))
    h = 1e-5
    for i, th in enumerate(thetas):
        p = np.array([math.cos(th), math.sin(th)])
        def e(pp):
            f = m.dual_value(q, pp)
            return 0.5 * f * f
        e1, e2 = np.eye(2)
        out[i, 0, 0] = (e(p + h * e1) - 2 * e(p) + e(p - h * e1)) / (h * h)
        out[i, 1, 1] = (e(p + h * e2) - 2 * e(p) + e(p - h * e2)) / (h * h)
        out[i, 0, 1] = out[i, 1, 0] = (
            e(p + h * (e1 + e2)) - e(p + h * (e1 - e2))
            - e(p - h * (e1 - e2)) + e(p - h * (e1 + e2))) / (4 * h * h)
    return out


def _min_eig_batch(mats):
    a = mats[..., 0, 0]
    d = mats[..., 1, 1]
    b = 0.5 * (mats[..., 0, 1] + mats[..., 1, 0])
    return np.min(0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * b))


def convexity_margin(m, parts, n=CONVEXITY_GRID):
    """Sampled min eigenvalue of the perturbed dual fiber tensor.

    Sampling runs over an n x n grid of tube coordinates (or of the
    fundamental domain, for constant parts) times n unit covector
    angles.  Positive margin keeps every sampled fiber strongly convex;
    this is a sampled bound, not a certificate.
    """
    thetas = (np.arange(n) + 0.5) * (2.0 * math.pi / n)
    worst = math.inf
    for spec, s in parts:
        if s == 0.0:
            continue
        if isinstance(spec, ConstantQuadratic):
            grid_q = [np.array([x, y])
                      for x in (np.arange(n) + 0.5) / n
                      for y in (np.arange(8) + 0.5) / 8]
            for q in grid_q:
                base = _dual_tensor_batch(m, q, thetas)
                worst = min(worst, _min_eig_batch(base + s * spec.S))
            continue
        tube = spec.tube
        t0, eps = spec.window
        t1s = np.linspace(-spec.radius, spec.radius, n)
        taus = np.linspace(t0 - eps, t0 + eps, n)
        for t1 in t1s:
            for tau in taus:
                S = spec._smatrix_at(m, t1, tau)
                if not S.any():
                    continue
                q = tube.point(t1, tau)
                base = _dual_tensor_batch(m, q, thetas)
                worst = min(worst, _min_eig_batch(base + s * S))
    if worst is math.inf:
        # no active part: fall back to the base tensor at a few points
        q = m.atlas.chart.wrap(np.zeros(2) + 0.25)
        worst = _min_eig_batch(_dual_tensor_batch(m, q, thetas))
    return float(worst)


def convexity_bound(m, spec, s_hi=1.0, iters=30):
    """Largest amplitude with positive sampled convexity margin."""
    if convexity_margin(m, [(spec, s_hi)]) > 0.0:
        return s_hi
    lo, hi = 0.0, s_hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if convexity_margin(m, [(spec, mid)]) > 0.0:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# orbit preservation
# ---------------------------------------------------------------------------

def check_orbit_preserved(m, spec, orbit, s, n=129, tol=1e-11):
    """Max perturbed-flow residual along the original orbit samples.

    Returns max(orbit closure residual, sup |R_s - R_0| over samples);
    admissible 'a' profiles keep the field deviation at zero on the
    orbit, the 'b' profile control does not.
    """
    T = orbit.period
    times = np.linspace(0.0, T, n)
    traj = integrate(m, orbit.state, T, tol=tol, t_eval=list(times[1:-1]))
    states = _states_at(traj, times)
    pert = PerturbedMetric(m, [(spec, s)])
    rhs0, rhs1 = reeb_rhs(m), reeb_rhs(pert)
    dev = 0.0
    for y in states:
        dev = max(dev, float(np.max(np.abs(rhs1(y) - rhs0(y)))))
    return max(float(orbit.residual), dev)


# ---------------------------------------------------------------------------
# gradient and Hessian of h on the unit level
# ---------------------------------------------------------------------------

def _orbit_slopes(m, spec, tau, dstep=1e-5):
    """Unit-level slopes (kappa1, kappa2) of the frame parameterization.

    kappa1 = d y2 / d y1 and kappa2 = d y2 / d t1 for the constraint
    F*(q(t1), y1 V + y2 P) = 1 at the orbit point (t1 = 0, y1 = 0).
    """
    tube = spec.tube
    c, dc = tube.center(tau)
    nu, _ = tube.normal(tau)
    q = tube.chart.wrap(c)
    f = m.F(q, dc)
    v = dc / f
    P = m.dF_dv(q, dc)
    Gr = _ref_quadratic(m, q)
    nn = nu / math.sqrt(float(nu @ Gr @ nu))
    V = Gr @ nn
    kappa1 = -float(v @ V)
    _, Bp = tube.frame(m, dstep, tau)
    _, Bm = tube.frame(m, -dstep, tau)
    dP = (Bp[:, 1] - Bm[:, 1]) / (2.0 * dstep)
    gq = m.dual_grad_q(q, P)
    kappa2 = -float(gq @ nu) - float(v @ dP)
    return kappa1, kappa2


def h_derivatives(m, spec, t):
    """Gradient and Hessian of h = -(A p, p)/2 in tube-frame coordinates.

    Coordinates are (y1, t1): the V-coefficient of the unit covector and
    the normal offset.  Exact closed forms from the profile entries; the
    unit-level slopes kappa couple in only for profiles with nonzero
    on-orbit entries (the 'b' family), and the 'a' family reduces to

        grad = 0,  Hess = [[-a1, -a2], [-a2, -a3]].

    Raises OutsideWindow when t misses the coefficient window.
    """
    t0, eps = spec.window
    if abs(_wrap01(t - t0)) > eps:
        raise OutsideWindow(f"orbit time {t:.6g} outside window "
                            f"({t0 - eps:.6g}, {t0 + eps:.6g})")
    e = spec.entry_derivs(t)
    grad = np.array([-e["A12"], -0.5 * e["dA22"]])
    k1, k2 = _orbit_slopes(m, spec, t)
    h11 = -e["A11"] - 2.0 * e["A12"] * k1
    h12 = -e["dA12"] - e["A12"] * k2 - e["dA22"] * k1
    h22 = -0.5 * e["d2A22"] - 2.0 * e["dA22"] * k2
    return grad, np.array([[h11, h12], [h12, h22]])


def h_on_unit_level(m, spec, t1, tau, y1):
    """h = -(A y, y)/2 with y = (y1, y2) solved onto the unit level."""
    q, B = spec.tube.frame(m, t1, tau)
    y2 = 1.0
    for _ in range(60):
        p = y1 * B[:, 0] + y2 * B[:, 1]
        val, vstar = m.dual(q, p)
        slope = float(vstar @ B[:, 1])
        dy = (1.0 - val) / slope
        y2 += dy
        if abs(dy) < 1e-14:
            break
    A = spec.atilde(t1, tau)
    y = np.array([y1, y2])
    return -0.5 * float(y @ A @ y)


def h_derivatives_fd(m, spec, t, dy=1e-4, dt1=1e-4):
    """Central-difference oracle for h_derivatives, same parameterization."""
    def hv(t1, y1):
        return h_on_unit_level(m, spec, t1, t, y1)

    h0 = hv(0.0, 0.0)
    grad = np.array([
        (hv(0.0, dy) - hv(0.0, -dy)) / (2 * dy),
        (hv(dt1, 0.0) - hv(-dt1, 0.0)) / (2 * dt1),
    ])
    h11 = (hv(0.0, dy) - 2 * h0 + hv(0.0, -dy)) / (dy * dy)
    h22 = (hv(dt1, 0.0) - 2 * h0 + hv(-dt1, 0.0)) / (dt1 * dt1)
    h12 = (hv(dt1, dy) - hv(dt1, -dy) - hv(-dt1, dy) + hv(-dt1, -dy)) \
        / (4 * dy * dt1)
    return grad, np.array([[h11, h12], [h12, h22]])


# ---------------------------------------------------------------------------
# first-order Poincare response
# ---------------------------------------------------------------------------

def perturbation_stops(metric, orbit, per_window=33):
    """Forced landing times covering every part window along this orbit.

    On bases with flat stretches the adaptive error estimate is blind
    between stages, and a large step can cross a compactly supported
    perturbation window with no stage inside it; forcing landings across
    the window removes that failure mode.
    """
    stops = []
    if isinstance(metric, PerturbedMetric):
        for spec, s in metric.parts:
            if s == 0.0 or getattr(spec, "tube", None) is None:
                continue
            if spec.orbit_id != orbit.orbit_id:
                continue
            t0, eps = spec.window
            stops.extend(np.linspace(t0 - eps, t0 + eps, per_window)
                         * orbit.period)
    return stops


def perturbed_poincare_map(metric, orbit, tol=1e-10):
    """Return map with window-resolving stops derived from the metric."""
    return poincare_map(metric, orbit, tol=tol,
                        t_eval=perturbation_stops(metric, orbit))

def _contact_hessian(m, spec, state, frame, step=1e-3):
    """Hessian of h along the contact frame directions (V, W).

    Ambient second differences are exact to O(step^2) here because h and
    its full first derivative vanish at the orbit point for admissible
    profiles.
    """
    y0 = state.as_array()

    def hval(d):
        y = y0 + d
        u, _, _ = spec.value_grad(m, y[:2], y[2:])
        return -0.5 * u

    H = np.empty((2, 2))
    legs = (frame.V, frame.W)
    h0 = hval(np.zeros(4))
    for i in range(2):
        H[i, i] = (hval(step * legs[i]) - 2 * h0 + hval(-step * legs[i])) \
            / (step * step)
    H[0, 1] = H[1, 0] = (
        hval(step * (legs[0] + legs[1])) - hval(step * (legs[0] - legs[1]))
        - hval(-step * (legs[0] - legs[1])) + hval(-step * (legs[0] + legs[1]))
    ) / (4 * step * step)
    return H


def poincare_s_derivative(m, spec, orbit, nodes=65, tol=1e-10, step=1e-3):
    """Predicted dP/ds of the orbit's return matrix at s = 0.

        dP/ds = -P(0) int_window Y(t)^{-1} J H(t) Y(t) dt

    with Y the linearized flow reduced to the moving contact frame and H
    the frame Hessian of h along the orbit.  The integral runs over the
    window in physical time (Simpson weights on an odd uniform grid).
    """
    if nodes % 2 == 0:
        nodes += 1
    t0, eps = spec.window
    T = orbit.period
    taus = np.linspace(t0 - eps, t0 + eps, nodes)
    times = taus * T
    tr = variational_transport(m, orbit.state, T, tol=tol,
                               t_eval=list(times))
    frame0 = frame_at(m, orbit.state)
    P0 = reduce_monodromy(frame0, tr.monodromy)

    idx = np.searchsorted(tr.times, times - 1e-12)
    total = np.zeros((2, 2))
    w = np.ones(nodes)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    dt = (times[-1] - times[0]) / (nodes - 1)
    for k in range(nodes):
        i = min(int(idx[k]), len(tr.times) - 1)
        state_k = UnitCotangentState.from_array(tr.states[i])
        frame_k = frame_at(m, state_k)
        Y4 = tr.matrices[i]
        cols = []
        for leg in (frame0.V, frame0.W):
            _, cV, cW = decompose(frame_k, Y4 @ leg)
            cols.append([cV, cW])
        Y2 = np.array(cols).T
        H = _contact_hessian(m, spec, state_k, frame_k, step)
        total += w[k] * (inv2(Y2) @ J2 @ H @ Y2)
    integral = total * (dt / 3.0)
    return -(P0 @ integral)


def measured_s_derivative(m, spec, orbit, ds=0.05, tol=1e-10,
                          central=False, base_map=None):
    """Finite-difference dP/ds from actual perturbed return maps.

    The response is linear in s for 'a' profiles, so the forward
    difference against the unperturbed map is the cheap default.
    """
    plus = perturbed_poincare_map(perturbed_metric(m, spec, ds), orbit,
                                  tol=tol).matrix
    if central:
        minus = perturbed_poincare_map(perturbed_metric(m, spec, -ds),
                                       orbit, tol=tol).matrix
        return (plus - minus) / (2.0 * ds)
    if base_map is None:
        base_map = poincare_map(m, orbit, tol=tol).matrix
    return (plus - base_map) / ds


# ---------------------------------------------------------------------------
# nondegenerification of a finite orbit set
# ---------------------------------------------------------------------------

STAGE_PEAKS = ((1.0, 0.0, 0.0), (1.0, 0.6, 0.0), (1.0, 0.6, 0.35))
AMPLITUDES = (0.005, 0.01, 0.02, 0.05, 0.1)


@dataclass(frozen=True)
class NondegenerifyEntry:
    orbit_id: str
    amplitude: float
    peaks: tuple[float, float, float]
    margin_before: float
    margin_after: float
    kind_after: str


@dataclass(frozen=True)
class NondegenerifyResult:
    metric: FinslerMetric
    entries: tuple[NondegenerifyEntry, ...]


def _window_disjoint(tube, other_states, chart):
    for q in other_states:
        t0, eps = tube.window
        for tau in np.linspace(t0 - eps, t0 + eps, 33):
            if chart.distance(q, tube.point(0.0, tau)) <= 1.05 * tube.radius:
                raise SelfIntersection(
                    f"window tube of {tube.orbit_id} meets another listed "
                    "orbit; choose disjoint windows")


def _search_orbit(m, orbit, others, budget, margin_target, window, radius,
                  amplitudes, tol):
    pm0 = poincare_map(m, orbit, tol=tol)
    margin0 = eigenvalue_margin(pm0.matrix)
    if margin0 >= margin_target:
        entry = NondegenerifyEntry(orbit.orbit_id, 0.0, (0.0, 0.0, 0.0),
                                   margin0, margin0,
                                   classify(pm0.matrix).kind)
        return None, entry
    tube = build_tube(m, orbit, window[0], window[1], radius=radius)
    if others:
        _window_disjoint(tube, others, m.atlas.chart)
    for s in amplitudes:
        if s > budget:
            break
        for peaks in STAGE_PEAKS:
            spec = PerturbationSpec(orbit.orbit_id, "a", peaks,
                                    tube.window, radius, tube)
            if convexity_margin(m, [(spec, s)], n=32) <= 0.0:
                continue
            pm_s = perturbed_poincare_map(PerturbedMetric(m, [(spec, s)]),
                                          orbit, tol=tol)
            mg = eigenvalue_margin(pm_s.matrix)
            cls = classify(pm_s.matrix)
            if mg >= margin_target and cls.nondegenerate:
                entry = NondegenerifyEntry(orbit.orbit_id, s, spec.peaks,
                                           margin0, mg, cls.kind)
                return (spec, s), entry
    raise BudgetExhausted(
        f"no admissible amplitude <= {budget:g} makes orbit "
        f"{orbit.orbit_id} nondegenerate with margin >= {margin_target:g}")


def nondegenerify(m, orbits, budget=0.1, margin_target=1e-4,
                  window=(0.5, 0.1), radius=0.15,
                  amplitudes=AMPLITUDES, tol=1e-10, threads=1):
    """Perturb within budget until every listed orbit is nondegenerate.

    Per orbit: smallest amplitude wins, with the single-a1 stage tried
    before (a1, a2) before all three coefficients at each amplitude.
    Orbits already nondegenerate are left untouched (amplitude 0).  The
    perturbations use disjoint tubes, so the searches are independent
    (and run on a thread pool when asked); the final metric carries the
    union of the accepted parts, merged in input order.
    """
    sample_cache = {}
    for orbit in orbits:
        times = np.linspace(0.0, orbit.period, 65)
        traj = integrate(m, orbit.state, orbit.period, tol=1e-11,
                         t_eval=list(times[1:-1]))
        sample_cache[orbit.orbit_id] = _states_at(traj, times)[:, :2]

    def run(orbit):
        others = [q for oid, qs in sample_cache.items()
                  if oid != orbit.orbit_id for q in qs]
        return _search_orbit(m, orbit, others, budget, margin_target,
                             window, radius, amplitudes, tol)

    if threads > 1 and len(orbits) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, orbits))
    else:
        results = [run(orbit) for orbit in orbits]

    parts = [part for part, _ in results if part is not None]
    entries = tuple(entry for _, entry in results)
    return NondegenerifyResult(PerturbedMetric(m, parts), entries)


# ---------------------------------------------------------------------------
# config round-trip
# ---------------------------------------------------------------------------

def spec_to_dict(spec, s):
    """JSON/TOML-ready record; tubes rebuild from the orbit catalog."""
    return {
        "orbit_id": spec.orbit_id,
        "profile": spec.profile,
        "peaks": [float(x) for x in spec.peaks],
        "window": [float(spec.window[0]), float(spec.window[1])],
        "radius": float(spec.radius),
        "shoulder_frac": float(spec.shoulder_frac),
        "s": float(s),
    }


def spec_from_dict(m, orbit, d):
    """Rebuild (spec, s) against a base metric and its cataloged orbit."""
    if orbit.orbit_id != d["orbit_id"]:
        raise ValueError(f"orbit {orbit.orbit_id!r} does not match spec "
                         f"record {d['orbit_id']!r}")
    t0, eps = d["window"]
    tube = build_tube(m, orbit, t0, eps, radius=d["radius"])
    spec = PerturbationSpec(d["orbit_id"], d["profile"],
                            tuple(d["peaks"]), (t0, eps), d["radius"],
                            tube, shoulder_frac=d.get("shoulder_frac",
                                                      SHOULDER_FRAC))
    return spec, float(d["s"])

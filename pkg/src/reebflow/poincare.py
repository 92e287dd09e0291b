"""Linearized return maps of closed Reeb orbits and their conjugacy classes.

At a unit cotangent state y = (q, p) with field direction g = dF*/dp the
canonical 1-form is lambda(w) = p.w_q and its differential in chart
coordinates is dlambda(u, w) = u_p.w_q - u_q.w_p.  The contact plane
xi = ker(lambda) inside the tangent space of the level {F* = 1} carries the
frame

    V = (0, rot(g)),            rot(x, y) = (-y, x)
    W = (rot(p), beta g),       beta = -dF*/dq . rot(p) / |g|^2

scaled so dlambda(V, W) = 1 exactly (the raw pairing is g.p = F* = 1 on the
level); lambda(V) = lambda(W) = 0 and dF*(V) = dF*(W) = 0 hold by
construction.  Monodromy matrices come from transporting the variational
equation Ydot = Df(y(t)) Y along the orbit with 5-point finite-difference
Jacobians, and the return map is the monodromy expressed in the (V, W) frame
modulo the flow direction.  Return maps are symplectic (det = 1), so their
conjugacy class is decided by the trace:

    |tr| < 2   elliptic    eigenvalues exp(+-i theta), rotation sense from
                           the sign of the lower-left entry;
    |tr| > 2   hyperbolic  stretch factor a with |a| > 1;
    |tr| = 2   parabolic   sign sigma = tr/2 and shear orientation b from the
                           semi-definite form dlambda((M - sigma)u, u).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .errors import FramePairingSingular, NotSymplectic
from .flow import DormandPrince, H_FLOOR, UnitCotangentState, check_unit, reeb_rhs
from .metrics import FinslerMetric
from .orbits import ClosedOrbit

TRACE_TOL = 1e-6
DET_TOL = 1e-7
MAX_ITERATE = 64


def contact_one_form(y: np.ndarray, w: np.ndarray) -> float:
    """lambda = p dq evaluated on a tangent 4-vector w at state y."""
    return float(y[2:4] @ w[:2])


def dlambda(u: np.ndarray, w: np.ndarray) -> float:
    """dlambda = dp ^ dq on two tangent 4-vectors (chart coordinates)."""
    return float(u[2:4] @ w[:2] - u[:2] @ w[2:4])


@dataclass(frozen=True)
class ContactFrame:
    """(R, V, W) at a state: Reeb direction plus a dlambda-unimodular basis of xi."""

    state: UnitCotangentState
    R: np.ndarray
    V: np.ndarray
    W: np.ndarray


def frame_at(m: FinslerMetric, state: UnitCotangentState) -> ContactFrame:
    """Build the canonical contact frame at a unit cotangent state."""
    check_unit(m, state)
    q, p = state.q, state.p
    val, g, grad_q = m.dual_full(q, p)
    R = np.concatenate([g, -grad_q])
    rot_g = np.array([-g[1], g[0]])
    rot_p = np.array([-p[1], p[0]])
    pairing = float(g @ p)  # = F* = 1 on the level
    if abs(pairing) < 1e-6:
        raise FramePairingSingular(f"g.p = {pairing:.3e} at q={q}")
    V = np.concatenate([np.zeros(2), rot_g]) / pairing
    gg = float(g @ g)
    beta = -float(grad_q @ rot_p) / gg
    W = np.concatenate([rot_p, beta * g])
    return ContactFrame(state, R, V, W)


def decompose(frame: ContactFrame, zeta: np.ndarray) -> tuple[float, float, float]:
    """Coefficients (c_R, c_V, c_W) of a level-tangent vector in the frame.

    c_R = lambda(zeta); the xi-components come from dlambda pairings against
    the opposite frame leg (dlambda(V, W) = 1).
    """
    c_R = contact_one_form(frame.state.as_array(), zeta)
    rest = zeta - c_R * frame.R
    c_V = dlambda(rest, frame.W)
    c_W = dlambda(frame.V, rest)
    return c_R, c_V, c_W


# ---------------------------------------------------------------------------
# variational transport
# ---------------------------------------------------------------------------

def field_jacobian(rhs: Callable[[np.ndarray], np.ndarray], y: np.ndarray,
                   h: float = 1e-4) -> np.ndarray:
    """5-point central-difference Jacobian of the field at y."""
    J = np.empty((4, 4))
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1.0
        hj = h * (1.0 + abs(y[j]))
        J[:, j] = (rhs(y - 2 * hj * e) - 8 * rhs(y - hj * e)
                   + 8 * rhs(y + hj * e) - rhs(y + 2 * hj * e)) / (12 * hj)
    return J


@dataclass
class Transport:
    """Result of variational transport: endpoint, monodromy, sample history."""

    end: UnitCotangentState
    monodromy: np.ndarray  # 4x4
    times: np.ndarray
    states: np.ndarray     # (n, 4)
    matrices: np.ndarray   # (n, 4, 4) fundamental solutions at the samples


def variational_transport(m: FinslerMetric, state: UnitCotangentState, T: float,
                          tol: float = 1e-10, t_eval=None,
                          rhs_override: Callable[[np.ndarray], np.ndarray] | None = None,
                          jac_step: float = 1e-4) -> Transport:
    """Integrate the flow together with its 4x4 linearization over [0, T].

    The covector is renormalized to the unit level after accepted steps (the
    induced inconsistency in Y is of the order of the level drift, well below
    the contract tolerances).  ``t_eval`` forces sample landings.
    """
    check_unit(m, state)
    rhs = rhs_override if rhs_override is not None else reeb_rhs(m)

    def big_rhs(z: np.ndarray) -> np.ndarray:
        y = z[:4]
        Y = z[4:].reshape(4, 4)
        J = field_jacobian(rhs, y, jac_step)
        return np.concatenate([rhs(y), (J @ Y).ravel()])

    stepper = DormandPrince(big_rhs, tol)
    z = np.concatenate([state.as_array(), np.eye(4).ravel()])
    t = 0.0
    stops = sorted({float(s) for s in (t_eval if t_eval is not None else [])} | {T})
    stop_iter = iter(stops)
    next_stop = next(stop_iter)
    times = [0.0]
    states = [z[:4].copy()]
    mats = [np.eye(4)]
    h = stepper.initial_step(z, T)
    f0 = big_rhs(z)
    chart = m.atlas.chart
    from .errors import StepUnderflow

    while t < T - 1e-15 * max(1.0, T):
        while next_stop <= t + 1e-15 * max(1.0, T):
            next_stop = next(stop_iter)
        h = min(h, next_stop - t)
        if h < H_FLOOR * max(1.0, T):
            raise StepUnderflow(f"variational step underflow at t={t:.6g}")
        z_new, f_new, err, _ = stepper.attempt(z, h, f0)
        if err <= 1.0:
            t += h
            z = z_new
            val = m.dual_value(z[:2], z[2:4])
            z[2:4] /= val
            f0 = big_rhs(z)
            chart.check_inside(z[:2])
            times.append(t)
            states.append(z[:4].copy())
            mats.append(z[4:].reshape(4, 4).copy())
        fac = 0.9 * err ** -0.2 if err > 0 else 5.0
        h = h * min(5.0, max(0.2, fac))

    return Transport(UnitCotangentState.from_array(z[:4]), z[4:].reshape(4, 4),
                     np.array(times), np.array(states), np.array(mats))


# ---------------------------------------------------------------------------
# return maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoincareMap:
    orbit_id: str
    matrix: np.ndarray      # 2x2 in the (V, W) frame
    monodromy: np.ndarray   # full 4x4
    trace: float
    det: float
    reeb_eigen_defect: float  # |M R - R| / |R|, should vanish on closed orbits


def reduce_monodromy(frame: ContactFrame, monodromy: np.ndarray) -> np.ndarray:
    """Express the level-restricted monodromy in the (V, W) frame mod flow."""
    cols = []
    for leg in (frame.V, frame.W):
        _, c_V, c_W = decompose(frame, monodromy @ leg)
        cols.append([c_V, c_W])
    return np.array(cols).T


def poincare_map(m: FinslerMetric, orbit: ClosedOrbit, tol: float = 1e-10,
                 det_tol: float = DET_TOL, t_eval=None) -> PoincareMap:
    """Linearized return map of a closed orbit in its canonical contact frame.

    ``t_eval`` forces step landings; pass them when the field's jacobian
    has compact support (a tube perturbation, say) that large adaptive
    steps could otherwise jump across without any stage sampling it.
    """
    tr = variational_transport(m, orbit.state, orbit.period, tol=tol,
                               t_eval=t_eval)
    frame = frame_at(m, orbit.state)
    M2 = reduce_monodromy(frame, tr.monodromy)
    det = float(np.linalg.det(M2))
    if abs(det - 1.0) > det_tol:
        raise NotSymplectic(f"return map determinant {det!r} off by {abs(det-1):.3e}")
    defect = float(np.linalg.norm(tr.monodromy @ frame.R - frame.R)
                   / np.linalg.norm(frame.R))
    return PoincareMap(orbit.orbit_id, M2, tr.monodromy, float(np.trace(M2)), det, defect)


# ---------------------------------------------------------------------------
# conjugacy classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Classification:
    kind: str               # elliptic | hyperbolic | parabolic
    trace: float
    det: float
    theta: float | None = None       # elliptic rotation angle in (0, 2*pi)
    a: float | None = None           # hyperbolic stretch, |a| > 1
    sigma: int | None = None         # parabolic sign
    b: int | None = None             # parabolic shear orientation (0 if M = sigma I)
    nondegenerate: bool = True
    rational_rotation: tuple[int, int] | None = None

    def parameter(self) -> float:
        if self.kind == "elliptic":
            return self.theta
        if self.kind == "hyperbolic":
            return self.a
        return float(self.b if self.b is not None else 0)


def classify(M: np.ndarray, tol_trace: float = TRACE_TOL,
             max_denominator: int = MAX_ITERATE) -> Classification:
    """Symplectic conjugacy class of a 2x2 return map.

    Elliptic rotation sense follows the sign of M[1,0] (equivalently of the
    definite form dlambda(u, Mu)); the hyperbolic parameter is the eigenvalue
    of modulus > 1; parabolic shear orientation evaluates the semi-definite
    form dlambda((M - sigma)u, u) on a vector outside its kernel.
    """
    M = np.asarray(M, dtype=float)
    tr = float(np.trace(M))
    det = float(np.linalg.det(M))
    if abs(tr) < 2.0 - tol_trace:
        theta = math.acos(max(-1.0, min(1.0, 0.5 * tr)))
        if M[1, 0] < 0:
            theta = 2.0 * math.pi - theta
        frac = Fraction(theta / (2.0 * math.pi)).limit_denominator(max_denominator)
        rr = None
        if abs(theta / (2.0 * math.pi) - float(frac)) < 1e-9 and frac.denominator <= max_denominator:
            rr = (frac.numerator, frac.denominator)
        return Classification("elliptic", tr, det, theta=theta,
                              nondegenerate=True, rational_rotation=rr)
    if abs(tr) > 2.0 + tol_trace:
        s = 1.0 if tr > 0 else -1.0
        a = 0.5 * (tr + s * math.sqrt(tr * tr - 4.0))
        return Classification("hyperbolic", tr, det, a=a, nondegenerate=True)
    sigma = 1 if tr > 0 else -1
    N = M - sigma * np.eye(2)
    if float(np.max(np.abs(N))) <= tol_trace:
        return Classification("parabolic", tr, det, sigma=sigma, b=0, nondegenerate=False)
    b = 0
    for u in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
        w = N @ u
        if float(np.linalg.norm(w)) > tol_trace:
            omega = float(w[0] * u[1] - w[1] * u[0])  # dlambda with (V, W) rows
            b = 1 if omega > 0 else -1
            break
    return Classification("parabolic", tr, det, sigma=sigma, b=b, nondegenerate=False)


def iterate_class(M: np.ndarray, k: int, tol_trace: float = TRACE_TOL) -> Classification:
    """Class of the k-th iterate (k <= 64), by classifying M^k directly."""
    if not 1 <= k <= MAX_ITERATE:
        raise ValueError(f"iterate order {k} outside 1..{MAX_ITERATE}")
    return classify(np.linalg.matrix_power(np.asarray(M, dtype=float), k), tol_trace)


def classification_record(pm: PoincareMap, cls: Classification) -> dict:
    """JSON-ready classification entry appended to orbit catalogs."""
    return {
        "id": pm.orbit_id,
        "trace": float(pm.trace),
        "det": float(pm.det),
        "class": cls.kind,
        "theta": None if cls.theta is None else float(cls.theta),
        "a": None if cls.a is None else float(cls.a),
        "sigma": cls.sigma,
        "b": cls.b,
        "nondegenerate": bool(cls.nondegenerate),
        "rational_rotation": list(cls.rational_rotation) if cls.rational_rotation else None,
        "reeb_eigen_defect": float(pm.reeb_eigen_defect),
    }


def eigenvalue_margin(M: np.ndarray) -> float:
    """min |mu - 1| over the spectrum: the distance from degeneracy."""
    return float(min(abs(mu - 1.0) for mu in np.linalg.eigvals(np.asarray(M, dtype=float))))

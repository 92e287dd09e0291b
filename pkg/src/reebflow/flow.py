"""Reeb dynamics of the dual norm on the unit cotangent level {F* = 1}.

The geodesic flow is realized as the Hamiltonian flow of F*(q, p) restricted
to its unit level, where it coincides with the Reeb flow of the canonical
1-form p dq.  By the envelope theorem the field is

    qdot = dF*/dp = v*(q, p)        (the support maximizer, a unit vector)
    pdot = -dF*/dq = F* dF/dq(q, v*)

so time is arclength: p.qdot = F* = 1 on the level.  Integration uses an
embedded Dormand-Prince 5(4) pair with the covector renormalized to the unit
level after every accepted step (p <- p / F*), which keeps the level drift at
roundoff over long horizons while the pre-renormalization drift is tracked
and reported.

A tangent-side geodesic integrator (the spray of the energy Lagrangian) is
provided as an independent route; the Legendre map must conjugate the two
flows, which the tests exercise on curved examples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NotUnitSpeed, StepUnderflow
from .metrics import FinslerMetric, inv2, legendre, legendre_inverse

UNIT_TOL = 1e-9
DEFAULT_TOL = 1e-10
H_FLOOR = 1e-14

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                187 / 2100, 1 / 40])


@dataclass(frozen=True)
class UnitCotangentState:
    """A point of the unit cotangent level in chart coordinates."""

    q: np.ndarray
    p: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @staticmethod
    def from_array(y: np.ndarray) -> "UnitCotangentState":
        return UnitCotangentState(np.array(y[:2], dtype=float), np.array(y[2:], dtype=float))


def unit_state(m: FinslerMetric, q: Sequence[float], p: Sequence[float]) -> UnitCotangentState:
    """Project (q, p) onto {F* = 1} by scaling p."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    val = m.dual_value(q, p)
    return UnitCotangentState(q, p / val)


def check_unit(m: FinslerMetric, state: UnitCotangentState, tol: float = UNIT_TOL) -> float:
    defect = abs(m.dual_value(state.q, state.p) - 1.0)
    if defect > tol:
        raise NotUnitSpeed(f"state off the unit level by {defect:.3e}")
    return defect


def reeb_vector(m: FinslerMetric, state: UnitCotangentState) -> np.ndarray:
    """The Reeb field (qdot, pdot) at a unit cotangent state."""
    check_unit(m, state)
    val, vstar, grad_q = m.dual_full(state.q, state.p)
    return np.concatenate([vstar, -grad_q])


def reeb_rhs(m: FinslerMetric) -> Callable[[np.ndarray], np.ndarray]:
    """Unchecked field closure y=(q,p) -> ydot for the integrator hot path."""

    def rhs(y: np.ndarray) -> np.ndarray:
        val, vstar, grad_q = m.dual_full(y[:2], y[2:])
        return np.concatenate([vstar, -grad_q])

    return rhs


# ---------------------------------------------------------------------------
# adaptive stepper
# ---------------------------------------------------------------------------

class DormandPrince:
    """Embedded 5(4) stepper over an autonomous rhs, with FSAL reuse."""

    def __init__(self, rhs: Callable[[np.ndarray], np.ndarray], tol: float = DEFAULT_TOL):
        self.rhs = rhs
        self.atol = tol
        self.rtol = tol

    def initial_step(self, y: np.ndarray, span: float) -> float:
        f = self.rhs(y)
        scale = (np.linalg.norm(y) + 1.0) / (np.linalg.norm(f) + 1e-12)
        return min(0.01 * scale, 0.1 * abs(span)) or 1e-6

    def attempt(self, y: np.ndarray, h: float, f0: np.ndarray | None = None):
        """One trial step; returns (y_new, f_new, err_norm, stages)."""
        k = [f0 if f0 is not None else self.rhs(y)]
        for i in range(1, 7):
            yi = y + h * sum(a * kk for a, kk in zip(_A[i], k))
            k.append(self.rhs(yi))
        y5 = y + h * sum(b * kk for b, kk in zip(_B5, k) if b != 0.0)
        y4 = y + h * sum(b * kk for b, kk in zip(_B4, k) if b != 0.0)
        sc = self.atol + self.rtol * np.maximum(np.abs(y), np.abs(y5))
        err = math.sqrt(float(np.mean(((y5 - y4) / sc) ** 2)))
        return y5, k[6], err, k  # k[6] = rhs(y5) by the FSAL property


@dataclass
class Trajectory:
    """Integration record: times, raw (unwrapped) states, drift diagnostics."""

    times: np.ndarray
    states: np.ndarray  # shape (n, 4), rows (q1, q2, p1, p2)
    metric_hash: str
    max_drift: float  # max |F*-1| before renormalization
    n_steps: int
    n_rejected: int

    @property
    def final(self) -> UnitCotangentState:
        return UnitCotangentState.from_array(self.states[-1])

    def state_at_index(self, i: int) -> UnitCotangentState:
        return UnitCotangentState.from_array(self.states[i])


def integrate(m: FinslerMetric, state: UnitCotangentState, T: float,
              tol: float = DEFAULT_TOL, t_eval: Sequence[float] | None = None,
              renormalize: bool = True, check_chart: bool = True,
              aux: Callable[[np.ndarray], np.ndarray] | None = None,
              record: bool = True) -> Trajectory:
    """Integrate the Reeb flow for time T (arclength), renormalizing each step.

    ``t_eval`` forces exact landings at the given times (they become step
    boundaries), so sampled comparisons need no interpolation.  ``aux`` adds
    quadrature variables zdot = aux(y) integrated alongside the state with the
    same error control (used for line pairings and length functionals).
    """
    check_unit(m, state)
    base_rhs = reeb_rhs(m)
    n_aux = 0
    if aux is not None:
        n_aux = np.asarray(aux(state.as_array())).size

        def rhs(y):
            return np.concatenate([base_rhs(y[:4]), np.asarray(aux(y[:4]), dtype=float)])
    else:
        rhs = base_rhs

    stepper = DormandPrince(rhs, tol)
    y = np.concatenate([state.as_array(), np.zeros(n_aux)])
    t = 0.0
    sign = 1.0 if T >= 0 else -1.0
    stops = sorted({float(s) for s in (t_eval if t_eval is not None else [])} | {abs(T)})
    chart = m.atlas.chart

    times = [0.0]
    states = [y.copy()]
    max_drift = 0.0
    n_steps = 0
    n_rejected = 0
    h = stepper.initial_step(y, T)
    f0 = rhs(y)
    stop_iter = iter(stops)
    next_stop = next(stop_iter)

    while t < abs(T) - 1e-15 * max(1.0, abs(T)):
        while next_stop <= t + 1e-15 * max(1.0, abs(T)):
            next_stop = next(stop_iter)
        h = min(h, next_stop - t)
        if h < H_FLOOR * max(1.0, abs(T)):
            raise StepUnderflow(f"step {h:.3e} at t={sign * t:.6g}")
        y_new, f_new, err, _ = stepper.attempt(y, sign * h, f0)
        if err <= 1.0:
            t += h
            y = y_new
            f0 = f_new
            n_steps += 1
            if renormalize:
                val = m.dual_value(y[:2], y[2:4])
                max_drift = max(max_drift, abs(val - 1.0))
                y[2:4] /= val
                f0 = rhs(y)
            if check_chart:
                chart.check_inside(y[:2])
            if record or abs(t - abs(T)) < 1e-15 * max(1.0, abs(T)) or (
                    t_eval is not None and any(abs(t - s) < 1e-12 for s in stops)):
                times.append(sign * t)
                states.append(y.copy())
        else:
            n_rejected += 1
        fac = 0.9 * err ** -0.2 if err > 0 else 5.0
        h = h * min(5.0, max(0.2, fac))

    return Trajectory(np.array(times), np.array(states), m.metric_hash(),
                      max_drift, n_steps, n_rejected)


# ---------------------------------------------------------------------------
# tangent-side spray (independent route)
# ---------------------------------------------------------------------------

def spray_rhs(m: FinslerMetric) -> Callable[[np.ndarray], np.ndarray]:
    """Geodesic spray of the energy F^2/2 in (x, v) coordinates.

    From d/dt (g_F v) = F dF/dq and the symmetry of the Cartan tensor,
    vdot = g_F^{-1} (F dF/dq - D v) with D the directional q-derivative of
    g_F along v (central differences; only this projection is needed).
    """

    def rhs(y: np.ndarray) -> np.ndarray:
        x, v = y[:2], y[2:]
        g = m.fundamental(x, v)
        f = m.F(x, v)
        dq = m.dF_dq(x, v)
        h = 1e-5
        D = (m.fundamental(x + h * v, v) - m.fundamental(x - h * v, v)) / (2 * h)
        vdot = inv2(g) @ (f * dq - D @ v)
        return np.concatenate([v, vdot])

    return rhs


def spray_integrate(m: FinslerMetric, x: Sequence[float], v: Sequence[float], T: float,
                    tol: float = DEFAULT_TOL, t_eval: Sequence[float] | None = None) -> Trajectory:
    """Integrate the tangent-side geodesic ODE; F(x, v) is conserved, not enforced."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    f0 = m.F(x, v)
    if abs(f0 - 1.0) > 1e-8:
        raise NotUnitSpeed(f"spray start has F = {f0!r}")
    rhs = spray_rhs(m)
    stepper = DormandPrince(rhs, tol)
    y = np.concatenate([x, v])
    t = 0.0
    times = [0.0]
    states = [y.copy()]
    stops = sorted({float(s) for s in (t_eval if t_eval is not None else [])} | {abs(T)})
    stop_iter = iter(stops)
    next_stop = next(stop_iter)
    h = stepper.initial_step(y, T)
    fprev = rhs(y)
    n_rej = 0
    n_steps = 0
    while t < abs(T) - 1e-15 * max(1.0, abs(T)):
        while next_stop <= t + 1e-15 * max(1.0, abs(T)):
            next_stop = next(stop_iter)
        h = min(h, next_stop - t)
        if h < H_FLOOR * max(1.0, abs(T)):
            raise StepUnderflow(f"step {h:.3e} at t={t:.6g}")
        y_new, f_new, err, _ = stepper.attempt(y, h, fprev)
        if err <= 1.0:
            t += h
            y, fprev = y_new, f_new
            n_steps += 1
            m.atlas.chart.check_inside(y[:2])
            times.append(t)
            states.append(y.copy())
        else:
            n_rej += 1
        fac = 0.9 * err ** -0.2 if err > 0 else 5.0
        h = h * min(5.0, max(0.2, fac))
    return Trajectory(np.array(times), np.array(states), m.metric_hash(), 0.0, n_steps, n_rej)


def conjugacy_error(m: FinslerMetric, state: UnitCotangentState, T: float,
                    n_checks: int = 21, tol: float = DEFAULT_TOL) -> float:
    """Max chart distance between the Reeb flow and the Legendre-conjugated spray.

    Integrates both routes from Legendre-matched starts and compares
    (q, p) against (x, legendre(v)) at ``n_checks`` sample times.
    """
    ts = np.linspace(0.0, T, n_checks)[1:]
    cot = integrate(m, state, T, tol=tol, t_eval=ts)
    v0 = legendre_inverse(m, state.q, state.p)
    tan = spray_integrate(m, state.q, v0, T, tol=tol, t_eval=ts)
    chart = m.atlas.chart
    worst = 0.0
    for s in ts:
        ic = int(np.argmin(np.abs(cot.times - s)))
        it = int(np.argmin(np.abs(tan.times - s)))
        yc = cot.states[ic]
        yt = tan.states[it]
        p_tan = legendre(m, yt[:2], yt[2:])
        worst = max(worst, chart.distance(yc[:2], yt[:2]),
                    float(np.max(np.abs(yc[2:4] - p_tan))))
    return worst


# ---------------------------------------------------------------------------
# line pairings (action integrals along flow lines)
# ---------------------------------------------------------------------------

def line_pair(m: FinslerMetric, state: UnitCotangentState, T: float,
              fs: Sequence[Callable[[np.ndarray], float]],
              tol: float = 1e-12) -> np.ndarray:
    """Integrals of f_i(q) against the contact form along the flow line.

    Along Reeb lines lambda(ydot) = 1, so each integral is the time average
    carrier int_0^T f_i(q(t)) dt, computed as extra quadrature variables under
    the stepper's own error control.
    """

    def aux(y):
        lam = float(y[2:4] @ m.dual_full(y[:2], y[2:4])[1])
        return np.array([f(y[:2]) * lam for f in fs])

    traj = integrate(m, state, T, tol=tol, aux=aux, record=False)
    return traj.states[-1][4:]


# ---------------------------------------------------------------------------
# artifact export
# ---------------------------------------------------------------------------

def trajectory_to_csv(traj: Trajectory, path: str) -> None:
    """Write t, q1, q2, p1, p2 rows with 17 significant digits."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "q1", "q2", "p1", "p2"])
        for t, y in zip(traj.times, traj.states):
            w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in y[:4]])


def trajectory_to_svg(traj: Trajectory, path: str, wrap_periods: tuple[float, float] | None = None,
                      size: int = 480) -> None:
    """Plot the base projection q(t) as a plain polyline SVG (deterministic)."""
    pts = traj.states[:, :2].copy()
    if wrap_periods is not None:
        pts[:, 0] %= wrap_periods[0]
        pts[:, 1] %= wrap_periods[1]
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    scale = (size - 20) / float(span.max())

    def sx(x):
        return 10 + (x - lo[0]) * scale

    def sy(y):
        return size - 10 - (y - lo[1]) * scale

    # break the polyline where wrapping jumps
    chunks: list[list[str]] = [[]]
    prev = None
    for qx, qy in pts:
        if prev is not None and wrap_periods is not None and (
                abs(qx - prev[0]) > 0.5 * wrap_periods[0]
                or abs(qy - prev[1]) > 0.5 * wrap_periods[1]):
            chunks.append([])
        chunks[-1].append(f"{sx(qx):.2f},{sy(qy):.2f}")
        prev = (qx, qy)
    polys = "\n".join(
        f'<polyline fill="none" stroke="#205080" stroke-width="1" points="{" ".join(c)}"/>'
        for c in chunks if len(c) > 1)
    with open(path, "w") as fh:
        fh.write(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">\n{polys}\n</svg>\n')

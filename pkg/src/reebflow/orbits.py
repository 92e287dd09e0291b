"""Closed orbits of the Reeb flow: shooting, catalogs, minimal periods.

A closed orbit is stored by a unit cotangent start point and its period
(equal to the F-length of the underlying closed geodesic, since Reeb time is
arclength).  The finder is a damped Gauss-Newton shooting method on
(start point, period); the residual is the wrapped chart distance between the
time-T image and the start.  Start perturbations are projected back onto the
unit level, so the p-scaling direction is a harmless null direction that the
least-squares step ignores; a phase row pins the drift along the flow.

For the built-in families closed orbits are seeded analytically:

* constant-coefficient torus metrics: straight lines in every primitive
  rational direction, period F(displacement vector), both orientations;
* surfaces of revolution: parallel circles at critical radii (where the
  profile derivative vanishes), plus meridians on u-periodic profiles;
* the rotating sphere: the two equatorial circles with periods
  2*pi/(1 +- rho).

Everything gets verified (and, if necessary, polished) by the actual flow
before entering a catalog.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import NewtonDiverged, NoReturn, Tangency, UnknownFamily, UnknownOrbit
from .flow import DormandPrince, Trajectory, UnitCotangentState, integrate, reeb_rhs, \
    spray_integrate, unit_state
from .metrics import FinslerMetric, RandersMetric, RiemannianMetric, eval_metric, legendre

RESIDUAL_TOL = 1e-10
CATALOG_RESIDUAL = 1e-8
HORIZON_DEFAULT = 1e3
TRANSVERSALITY_TOL = 1e-6
MAX_DIVISOR = 12


@dataclass(frozen=True)
class ClosedOrbit:
    orbit_id: str
    metric_hash: str
    chart: str
    q0: np.ndarray
    p0: np.ndarray
    period: float
    residual: float
    minimal: bool = True
    iterate_of: str | None = None
    displacement: tuple[int, int] | None = None  # torus homotopy class, if known

    @property
    def state(self) -> UnitCotangentState:
        return UnitCotangentState(self.q0.copy(), self.p0.copy())

    def label(self) -> str:
        return f"{self.orbit_id} (T={self.period:.6g})"


def closure_residual(m: FinslerMetric, state: UnitCotangentState, T: float,
                     tol: float = 1e-11) -> tuple[float, Trajectory]:
    traj = integrate(m, state, T, tol=tol)
    d = traj.final.as_array() - state.as_array()
    d[:2] = m.atlas.chart.wrap_diff(d[:2])
    return float(np.linalg.norm(d)), traj


# ---------------------------------------------------------------------------
# shooting
# ---------------------------------------------------------------------------

def find_closed_orbit(m: FinslerMetric, guess: UnitCotangentState, period_guess: float,
                      residual_tol: float = RESIDUAL_TOL, max_iter: int = 30,
                      tol: float = 1e-11, orbit_id: str = "orbit") -> ClosedOrbit:
    """Polish (guess, period_guess) into a closed orbit by damped shooting.

    Raises NewtonDiverged when no damping factor reduces the residual or the
    iteration budget runs out above ``residual_tol``.
    """
    chart = m.atlas.chart
    rhs = reeb_rhs(m)

    def project(y: np.ndarray) -> np.ndarray:
        out = y.copy()
        out[2:] /= m.dual_value(out[:2], out[2:])
        return out

    def resid(y: np.ndarray, T: float) -> np.ndarray:
        st = UnitCotangentState.from_array(project(y))
        end = integrate(m, st, T, tol=tol).final.as_array()
        d = end - st.as_array()
        d[:2] = chart.wrap_diff(d[:2])
        return d

    y = project(guess.as_array())
    T = float(period_guess)
    r = resid(y, T)
    rn = float(np.linalg.norm(r))

    for _ in range(max_iter):
        if rn <= residual_tol:
            break
        # finite-difference shooting Jacobian in the projected coordinates
        J = np.zeros((5, 5))
        h = 1e-7
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            J[:4, j] = (resid(y + e, T) - r) / h
        end_state = integrate(m, UnitCotangentState.from_array(project(y)), T, tol=tol).final
        J[:4, 4] = rhs(end_state.as_array())
        f0 = rhs(y)
        J[4, :4] = f0 / np.linalg.norm(f0)  # phase condition row
        rhs_vec = np.concatenate([-r, [0.0]])
        step, *_ = np.linalg.lstsq(J, rhs_vec, rcond=None)

        lam = 1.0
        improved = False
        for _ in range(9):
            y_try = y + lam * step[:4]
            T_try = T + lam * step[4]
            r_try = resid(y_try, T_try)
            rn_try = float(np.linalg.norm(r_try))
            if rn_try < max(residual_tol, (1.0 - 0.25 * lam) * rn):
                y, T, r, rn = project(y_try), T_try, r_try, rn_try
                improved = True
                break
            lam *= 0.5
        if not improved:
            raise NewtonDiverged(
                f"shooting stalled at residual {rn:.3e} (target {residual_tol:g})")
    else:
        if rn > residual_tol:
            raise NewtonDiverged(f"no convergence in {max_iter} iterations: {rn:.3e}")

    st = UnitCotangentState.from_array(y)
    return ClosedOrbit(orbit_id, m.metric_hash(), chart.name, st.q, st.p, T, rn)


# ---------------------------------------------------------------------------
# section returns
# ---------------------------------------------------------------------------

def section_return(m: FinslerMetric, state: UnitCotangentState,
                   horizon: float = HORIZON_DEFAULT, radius: float = 0.5,
                   tol: float = 1e-11) -> tuple[UnitCotangentState, float]:
    """First return to the flow-orthogonal 3-plane through ``state``.

    The section is { y : n.(y - y0) = 0 } with n the unit field direction at
    y0, crossings counted with positive orientation (n.f > 0) and within
    chart distance ``radius`` of the base point.  Raises NoReturn past the
    horizon and Tangency when the crossing is too shallow.
    """
    rhs = reeb_rhs(m)
    chart = m.atlas.chart
    y0 = state.as_array()
    n = rhs(y0)
    n = n / np.linalg.norm(n)

    def gap(y: np.ndarray) -> float:
        d = y[:4] - y0
        d[:2] = chart.wrap_diff(d[:2])
        return float(n @ d)

    def near(y: np.ndarray) -> bool:
        d = y[:4] - y0
        d[:2] = chart.wrap_diff(d[:2])
        return float(np.linalg.norm(d)) <= radius

    stepper = DormandPrince(rhs, tol)
    y = y0.copy()
    t = 0.0
    # cap the step so a crossing can't be straddled together with a wrap jump
    wrap_scale = min((chart.periods[i] for i in range(2) if chart.periodic[i]),
                     default=math.inf)
    h_cap = min(0.5 * radius, 0.2 * wrap_scale, 1.0)
    h = min(stepper.initial_step(y, min(horizon, 1.0)), h_cap)
    f_here = rhs(y)
    armed = False  # require leaving the section ball before counting returns

    while t < horizon:
        y_new, f_new, err, _ = stepper.attempt(y, h, f_here)
        if err <= 1.0:
            g0, g1 = gap(y), gap(y_new)
            if not armed and not near(y_new):
                armed = True
            if armed and g0 < 0.0 <= g1 and (near(y_new) or near(y)):
                # locate the crossing inside [t, t+h] by Newton on tau
                tau = h * g0 / (g0 - g1)
                y_c, f_c = y, f_here
                for _ in range(10):
                    y_c, f_c, _, _ = stepper.attempt(y, tau, f_here)
                    g_c = gap(y_c)
                    slope = float(n @ f_c)
                    if abs(g_c) < 1e-13 or slope == 0.0:
                        break
                    tau = min(max(tau - g_c / slope, 0.0), h)
                if abs(gap(y_c)) <= 1e-10 and near(y_c):
                    trans = float(n @ f_c)
                    if abs(trans) < TRANSVERSALITY_TOL:
                        raise Tangency(
                            f"transversality {trans:.3e} below {TRANSVERSALITY_TOL:g}")
                    y_c[2:4] /= m.dual_value(y_c[:2], y_c[2:4])
                    return UnitCotangentState.from_array(y_c), t + tau
                # otherwise: a far crossing of the same plane; keep going
            t += h
            y, f_here = y_new, f_new
            val = m.dual_value(y[:2], y[2:4])
            y[2:4] /= val
            f_here = rhs(y)
            chart.check_inside(y[:2])
        fac = 0.9 * err ** -0.2 if err > 0 else 5.0
        h = min(h * min(5.0, max(0.2, fac)), h_cap)
    raise NoReturn(f"no section return within horizon {horizon:g}")


# ---------------------------------------------------------------------------
# minimal periods and iterates
# ---------------------------------------------------------------------------

def minimal_period(m: FinslerMetric, orbit: ClosedOrbit,
                   tol_factor: float = 10.0) -> tuple[ClosedOrbit, int]:
    """Reduce an orbit to its primitive period; returns (primitive, k).

    Divisors j = 2..12 are tried smallest first on the wrapped closure
    distance at T/j (threshold ``tol_factor`` times the orbit residual floor);
    reduction recurses so composite multiplicities accumulate.
    """
    thresh = tol_factor * max(orbit.residual, CATALOG_RESIDUAL * 1e-2)
    for j in range(2, MAX_DIVISOR + 1):
        if orbit.period / j < 1e-9:
            break
        d, _ = closure_residual(m, orbit.state, orbit.period / j)
        if d <= thresh:
            reduced = replace(orbit, period=orbit.period / j, residual=d)
            reduced = find_closed_orbit(m, reduced.state, reduced.period,
                                        orbit_id=orbit.orbit_id, residual_tol=RESIDUAL_TOL)
            prim, k = minimal_period(m, reduced, tol_factor)
            return prim, j * k
    return orbit, 1


def iterate_orbit(orbit: ClosedOrbit, k: int) -> ClosedOrbit:
    """The k-fold cover of a closed orbit (same geometric circle)."""
    return replace(orbit, orbit_id=f"{orbit.orbit_id}^x{k}", period=k * orbit.period,
                   minimal=(k == 1), iterate_of=None if k == 1 else orbit.orbit_id)


# ---------------------------------------------------------------------------
# family catalogs
# ---------------------------------------------------------------------------

_GOLD = 0.6180339887498949
_SILVER = 0.41421356237309515


def _primitive_directions(max_class: int) -> list[tuple[int, int]]:
    dirs = []
    for a in range(-max_class, max_class + 1):
        for b in range(-max_class, max_class + 1):
            if (a, b) == (0, 0):
                continue
            if math.gcd(abs(a), abs(b)) != 1:
                continue
            dirs.append((a, b))
    # stable order: by length then angle
    dirs.sort(key=lambda d: (d[0] ** 2 + d[1] ** 2, math.atan2(d[1], d[0])))
    return dirs


def _is_constant_torus(m: FinslerMetric) -> bool:
    if not all(m.atlas.chart.periodic):
        return False
    if isinstance(m, RandersMetric):
        return m.h.constant and m.b.constant
    if isinstance(m, RiemannianMetric):
        return m.G.constant
    return False


def catalog_family(m: FinslerMetric, max_class: int = 2,
                   verify_tol: float = 1e-11) -> list[ClosedOrbit]:
    """Analytic closed-orbit catalog for the built-in families.

    Raises UnknownFamily for metrics without one (use find_closed_orbit with
    your own seeds there).
    """
    if _is_constant_torus(m):
        return _catalog_torus_lines(m, max_class, verify_tol)
    chart = m.atlas.chart
    if chart.coord_names == ("u", "v"):
        if isinstance(m, RandersMetric) and getattr(m, "rho", None) is not None:
            return _catalog_rotating_sphere(m, verify_tol)
        if isinstance(m, RiemannianMetric):
            return _catalog_revolution(m, verify_tol)
    raise UnknownFamily(f"no analytic catalog for {m.describe()!r}")


def _catalog_torus_lines(m: FinslerMetric, max_class: int, verify_tol: float) -> list[ClosedOrbit]:
    chart = m.atlas.chart
    L = chart.periods
    out = []
    for i, (a, b) in enumerate(_primitive_directions(max_class)):
        # Two rationally independent offset steps.  (Using _GOLD**2 for the
        # second axis would pin q0[0]/L0 + q0[1]/L1 to a constant because
        # _GOLD**2 = 1 - _GOLD, which zeroes line averages of any test
        # function concentrated on the antidiagonal frequency.)
        q0 = np.array([((0.5 + i * _GOLD) % 1.0) * L[0],
                       ((0.25 + i * _SILVER) % 1.0) * L[1]])
        d = np.array([a * L[0], b * L[1]])
        T = eval_metric(m, q0, d)
        p0 = legendre(m, q0, d / T)
        st = unit_state(m, q0, p0)
        res, _ = closure_residual(m, st, T, tol=verify_tol)
        orb = ClosedOrbit(f"line({a},{b})", m.metric_hash(), chart.name,
                          st.q, st.p, T, res, displacement=(a, b))
        if res > CATALOG_RESIDUAL:
            orb = replace(find_closed_orbit(m, st, T, orbit_id=orb.orbit_id),
                          displacement=(a, b))
        out.append(orb)
    return out


def _critical_radii(m: RiemannianMetric) -> list[float]:
    """Roots of dr/du inside the working band, by sign change + bisection."""
    chart = m.atlas.chart
    lo, hi = chart.bounds[0]
    if chart.periodic[0]:
        lo, hi = 0.0, chart.periods[0]
    inset = max(chart.u_margin, 1e-6 * (hi - lo))
    us = np.linspace(lo + inset, hi - inset, 512)

    def dr(u: float) -> float:
        d = m.G.deriv(np.array([u, 0.0]))
        return float(d[0, 1, 1])  # d(r^2)/du has the same roots as dr/du (r>0)

    vals = [dr(u) for u in us]
    roots = []
    for i in range(len(us) - 1):
        if vals[i] == 0.0:
            roots.append(us[i])
        elif vals[i] * vals[i + 1] < 0:
            a, b = us[i], us[i + 1]
            fa = vals[i]
            for _ in range(80):
                c = 0.5 * (a + b)
                fc = dr(c)
                if fa * fc <= 0:
                    b = c
                else:
                    a, fa = c, fc
            roots.append(0.5 * (a + b))
    return roots


def _catalog_revolution(m: RiemannianMetric, verify_tol: float) -> list[ClosedOrbit]:
    chart = m.atlas.chart
    out = []
    for u_star in _critical_radii(m):
        r = math.sqrt(float(m.G.value(np.array([u_star, 0.0]))[1, 1]))
        q0 = np.array([u_star, 0.0])
        p0 = np.array([0.0, r])  # legendre of the unit parallel direction (0, 1/r)
        st = unit_state(m, q0, p0)
        T = 2.0 * math.pi * r
        res, _ = closure_residual(m, st, T, tol=verify_tol)
        orb = ClosedOrbit(f"parallel(u={u_star:.12g})", m.metric_hash(), chart.name,
                          st.q, st.p, T, res)
        if res > CATALOG_RESIDUAL:
            orb = find_closed_orbit(m, st, T, orbit_id=orb.orbit_id)
        out.append(orb)
    if chart.periodic[0]:
        # meridians close on u-periodic profiles; their length is the u-period
        for j, v0 in enumerate((0.0, math.pi)):
            q0 = np.array([0.0, v0])
            st = unit_state(m, q0, np.array([1.0, 0.0]))
            T = chart.periods[0]
            res, _ = closure_residual(m, st, T, tol=verify_tol)
            orb = ClosedOrbit(f"meridian(v={v0:.12g})", m.metric_hash(), chart.name,
                              st.q, st.p, T, res)
            if res > CATALOG_RESIDUAL:
                orb = find_closed_orbit(m, st, T, orbit_id=orb.orbit_id)
            out.append(orb)
    return out


def _catalog_rotating_sphere(m: RandersMetric, verify_tol: float) -> list[ClosedOrbit]:
    rho = m.rho
    chart = m.atlas.chart
    out = []
    for tag, p_v, T in (("equator+", 1.0 / (1.0 + rho), 2.0 * math.pi / (1.0 + rho)),
                        ("equator-", -1.0 / (1.0 - rho), 2.0 * math.pi / (1.0 - rho))):
        st = unit_state(m, np.array([0.5 * math.pi, 0.0]), np.array([0.0, p_v]))
        res, _ = closure_residual(m, st, T, tol=verify_tol)
        orb = ClosedOrbit(tag, m.metric_hash(), chart.name, st.q, st.p, T, res)
        if res > CATALOG_RESIDUAL:
            orb = find_closed_orbit(m, st, T, orbit_id=tag)
        out.append(orb)
    return out


# ---------------------------------------------------------------------------
# length via the tangent-side route
# ---------------------------------------------------------------------------

def length_via_spray(m: FinslerMetric, orbit: ClosedOrbit, tol: float = 1e-11) -> float:
    """F-length of the orbit recomputed on the tangent side.

    Integrates the geodesic spray from the Legendre-inverse start and
    accumulates F(x, v) dt as a quadrature variable (F is conserved but not
    enforced, so this genuinely cross-checks both routes).
    """
    from .metrics import legendre_inverse

    v0 = legendre_inverse(m, orbit.q0, orbit.p0)
    traj = spray_integrate(m, orbit.q0, v0, orbit.period, tol=tol)
    ts = traj.times
    fs = np.array([m.F(y[:2], y[2:]) for y in traj.states])
    return float(np.trapezoid(fs, ts))


# ---------------------------------------------------------------------------
# catalog serialization
# ---------------------------------------------------------------------------

def catalog_to_json(m: FinslerMetric, orbits: Sequence[ClosedOrbit],
                    extra: dict | None = None) -> str:
    """Serialize a catalog; floats carry 17 significant digits via repr."""
    doc = {
        "metric_hash": m.metric_hash(),
        "metric": m.describe(),
        "orbits": [
            {
                "id": o.orbit_id,
                "chart": o.chart,
                "q0": [float(x) for x in o.q0],
                "p0": [float(x) for x in o.p0],
                "period": float(o.period),
                "length": float(o.period),
                "residual": float(o.residual),
                "minimal": bool(o.minimal),
                "iterate_of": o.iterate_of,
                "displacement": list(o.displacement) if o.displacement else None,
            }
            for o in orbits
        ],
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True)


def catalog_from_json(text: str) -> tuple[str, list[ClosedOrbit]]:
    doc = json.loads(text)
    orbits = [
        ClosedOrbit(
            d["id"], doc["metric_hash"], d["chart"],
            np.array(d["q0"]), np.array(d["p0"]),
            d["period"], d["residual"], d["minimal"], d.get("iterate_of"),
            tuple(d["displacement"]) if d.get("displacement") else None,
        )
        for d in doc["orbits"]
    ]
    return doc["metric_hash"], orbits


def orbit_by_id(orbits: Sequence[ClosedOrbit], orbit_id: str) -> ClosedOrbit:
    for o in orbits:
        if o.orbit_id == orbit_id:
            return o
    raise UnknownOrbit(f"{orbit_id!r} not in catalog "
                       f"({', '.join(o.orbit_id for o in orbits)})")

"""Orbit-family averages of test functions against their volume targets.

A weighted family of closed orbits (a "current" here) pairs with a test
function f through the action average

    ratio(f) = sum_i r_i int_0^{T_i} f(q_i(t)) dt  /  sum_i r_i T_i,

where the line integrals carry the contact pairing along the flow (so the
integrand is exactly f on the unit level).  Equidistribution means these
ratios converge, as the family grows, to the volume average

    C(f) = int f dvol / int 1 dvol

with dvol the invariant surface volume whose density is fiber_area/pi.  This
module computes both sides, cross-checks the volume side through two
independent fiber-area routes, provides the Cesaro weighting schedule that
turns stagewise averages into a single converging sequence, and renders the
comparison as CSV (and a small SVG chart) for the command line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyCurrent, QuadratureUnderResolved
from .flow import line_pair
from .metrics import (FinslerMetric, fiber_area, fiber_area_montecarlo,
                      surface_integral)
from .orbits import ClosedOrbit, _is_constant_torus, catalog_family

__all__ = [
    "Current", "equal_weight", "pairings", "ratio", "target",
    "VolumeCheck", "volume_identity", "cesaro_schedule", "running_ratio",
    "ReportRow", "EquidistReport", "discrepancy_report",
    "torus_direction_current", "torus_test_functions",
    "revolution_test_functions",
]

# Relative floor (as a fraction of total volume) used when a test function
# integrates to nearly zero and a plain relative deviation would divide by it.
_SCALE_FLOOR = 1e-3


# ---------------------------------------------------------------------------
# weighted orbit families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Current:
    """A finite weighted family of closed orbits of one metric.

    Weights must be positive; all orbits must belong to the same metric
    (checked through the stored metric hash).  The empty family is allowed
    at construction but rejected by ratio().
    """
    label: str
    orbits: tuple[ClosedOrbit, ...]
    weights: tuple[float, ...]
    metric_hash: str
    k: int | None = None     # refinement stage (max direction class on tori)

    def __post_init__(self):
        if len(self.orbits) != len(self.weights):
            raise ValueError(
                f"{len(self.orbits)} orbits but {len(self.weights)} weights")
        for w in self.weights:
            if not (w > 0.0) or not math.isfinite(w):
                raise ValueError(f"weights must be positive, got {w!r}")
        for orb in self.orbits:
            if orb.metric_hash != self.metric_hash:
                raise ValueError(
                    f"orbit {orb.orbit_id} belongs to metric {orb.metric_hash[:12]}, "
                    f"current is for {self.metric_hash[:12]}")

    @property
    def total_length(self) -> float:
        return float(sum(w * o.period for w, o in zip(self.weights, self.orbits)))


def equal_weight(label: str, orbits: Sequence[ClosedOrbit]) -> Current:
    """Equal unit weights on every listed orbit."""
    orbits = tuple(orbits)
    if not orbits:
        raise EmptyCurrent(f"current {label!r} has no orbits")
    return Current(label, orbits, (1.0,) * len(orbits), orbits[0].metric_hash)


def pairings(m: FinslerMetric, current: Current,
             fs: Sequence[Callable[[np.ndarray], float]],
             tol: float = 1e-12) -> np.ndarray:
    """Line integrals int f_j(q) lambda(dot y) dt per orbit, shape (orbits, fs).

    One flow integration per orbit carries all the test functions as
    auxiliary quadrature channels.
    """
    if current.metric_hash != m.metric_hash():
        raise ValueError(
            f"current {current.label!r} was built for metric "
            f"{current.metric_hash[:12]}, not {m.metric_hash()[:12]}")
    out = np.empty((len(current.orbits), len(fs)))
    for i, orb in enumerate(current.orbits):
        out[i] = line_pair(m, orb.state, orb.period, fs, tol=tol)
    return out


def ratio(m: FinslerMetric, current: Current,
          f: Callable[[np.ndarray], float], tol: float = 1e-12) -> float:
    """Weighted action average of f along the family.

    Invariant under rescaling all weights by a common factor.  Raises
    EmptyCurrent on an empty family.
    """
    if not current.orbits:
        raise EmptyCurrent(f"current {current.label!r} has no orbits")
    pair = pairings(m, current, [f], tol=tol)[:, 0]
    w = np.asarray(current.weights)
    periods = np.array([o.period for o in current.orbits])
    return float((w @ pair) / (w @ periods))


# ---------------------------------------------------------------------------
# volume targets and the contact/surface volume identity
# ---------------------------------------------------------------------------

def _reference_point(m: FinslerMetric) -> np.ndarray:
    chart = m.atlas.chart
    q = np.empty(2)
    for axis in range(2):
        if chart.periodic[axis]:
            q[axis] = 0.37 * chart.periods[axis]
        else:
            lo, hi = chart.bounds[axis]
            q[axis] = lo + 0.37 * (hi - lo)
    return q


def _check_fiber_routes(m: FinslerMetric, tol: float) -> str:
    """Certify polar vs closed fiber areas on an interior probe grid.

    Returns the fiber method the caller should integrate with: 'closed' when
    a closed form exists (and it agrees with the polar quadrature pointwise
    to ``tol`` relative), else 'polar'.  Probes stay 10% of the span away
    from bounded chart edges, where the dual disk can stretch to aspect
    ratios the fixed-size angle grid cannot resolve (poles of a revolution
    chart); the identity being certified is pointwise in q, so interior
    probes cover it.
    """
    chart = m.atlas.chart
    if getattr(m, "fiber_area_closed", None) is None:
        return "polar"
    axes = []
    for axis in range(2):
        if chart.periodic[axis]:
            lo, span = 0.0, chart.periods[axis]
            axes.append(lo + span * np.array([0.07, 0.31, 0.52, 0.83]))
        else:
            lo, hi = chart.bounds[axis]
            axes.append(np.linspace(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo), 4))
    for a in axes[0]:
        for b in axes[1]:
            q = np.array([a, b])
            dev = abs(fiber_area(m, q) / fiber_area(m, q, method="closed") - 1.0)
            if dev > tol:
                raise QuadratureUnderResolved(
                    f"fiber-area routes disagree by {dev:.3e} at q={q}")
    return "closed"


def target(m: FinslerMetric, f: Callable[[np.ndarray], float],
           n: tuple[int, int] = (128, 128), tol: float = 1e-9) -> float:
    """Volume average C(f) = int f dvol / int 1 dvol.

    For metrics with a closed-form fiber area the volume density is first
    certified against the independent polar-quadrature route on an interior
    probe grid to ``tol`` relative (QuadratureUnderResolved on disagreement),
    then integrated with the closed form.  Families without a closed form
    integrate the polar route directly.  Constant-coefficient torus metrics
    shortcut to a plain Lebesgue average, with the route check done on the
    single shared fiber.  Revolution charts want a finer first axis than the
    default, for example n=(512, 64).
    """
    chart = m.atlas.chart
    if _is_constant_torus(m):
        q_ref = _reference_point(m)
        a_polar = fiber_area(m, q_ref)
        a_closed = fiber_area(m, q_ref, method="closed")
        if abs(a_polar / a_closed - 1.0) > tol:
            raise QuadratureUnderResolved(
                f"fiber-area routes disagree by {abs(a_polar / a_closed - 1.0):.3e}")
        num = surface_integral(m, f, n, tol=tol, weight="lebesgue")
        return num / (chart.periods[0] * chart.periods[1])
    method = _check_fiber_routes(m, tol)
    num = surface_integral(m, f, n, tol=tol, fiber_method=method)
    den = surface_integral(m, lambda q: 1.0, n, tol=tol, fiber_method=method)
    return num / den


@dataclass(frozen=True)
class VolumeCheck:
    """Both sides of int f lambda ^ dlambda = 2 pi int f dvol, plus deviation."""
    contact: float
    surface: float
    deviation: float


def volume_identity(m: FinslerMetric, f: Callable[[np.ndarray], float],
                    n: tuple[int, int] = (128, 128), method: str = "polar",
                    mc_samples: int = 200_000_000, seed: int = 0,
                    mc_area: float | None = None) -> VolumeCheck:
    """Check the contact volume against 2 pi times the surface volume of f.

    The contact side is the fiberwise area integral 2 int f(q) area(q) dq,
    evaluated either by polar quadrature on each fiber (``method='polar'``)
    or by a Monte Carlo area estimate (``method='montecarlo'``, restricted to
    constant-coefficient torus metrics where one fiber serves all points).
    The surface side uses the closed-form fiber area, so the two sides are
    genuinely independent routes.  The deviation is relative to the surface
    value, floored at _SCALE_FLOOR times the total contact volume so that
    functions integrating to zero do not divide by zero.  ``mc_area`` lets a
    caller reuse one Monte Carlo estimate across several test functions.
    """
    surface = 2.0 * math.pi * surface_integral(m, f, n, tol=None,
                                               fiber_method="closed")
    if method == "polar":
        contact = 2.0 * math.pi * surface_integral(m, f, n, tol=None,
                                                   fiber_method="polar")
        vol = 2.0 * math.pi * surface_integral(m, lambda q: 1.0, n, tol=None,
                                               fiber_method="closed")
    elif method == "montecarlo":
        if not _is_constant_torus(m):
            raise ValueError(
                "montecarlo route needs a constant-coefficient torus metric "
                "(one fiber shared by every point)")
        chart = m.atlas.chart
        q_ref = _reference_point(m)
        area_mc = fiber_area_montecarlo(m, q_ref, mc_samples, seed) \
            if mc_area is None else mc_area
        box = surface_integral(m, f, n, tol=None, weight="lebesgue")
        contact = 2.0 * area_mc * box
        vol = 2.0 * fiber_area(m, q_ref, method="closed") \
            * chart.periods[0] * chart.periods[1]
    else:
        raise ValueError(f"unknown volume identity method {method!r}")
    scale = max(abs(surface), _SCALE_FLOOR * abs(vol))
    return VolumeCheck(contact, surface, abs(contact - surface) / scale)


# ---------------------------------------------------------------------------
# Cesaro weighting schedule
# ---------------------------------------------------------------------------

def cesaro_schedule(B: Sequence[float]) -> list[int]:
    """Multiplicities n_N = ceil(N * cum_{N-1} / B_N) that wash out history.

    B lists the per-stage length denominators.  With these multiplicities the
    cumulative weighted denominator grows by a factor >= N+1 at stage N, so
    the running ratio is within 2/N of the stage ratio whenever consecutive
    stage ratios stay within a unit band of each other.
    """
    ns: list[int] = []
    acc = 0.0
    for N, b in enumerate(B, start=1):
        if not (b > 0.0) or not math.isfinite(b):
            raise ValueError(f"stage denominators must be positive, got {b!r}")
        n = 1 if N == 1 else max(1, math.ceil(N * acc / b))
        ns.append(n)
        acc += n * b
    return ns


def running_ratio(A: Sequence[float], B: Sequence[float],
                  n: Sequence[int]) -> np.ndarray:
    """Cumulative weighted ratios (sum n_i A_i)/(sum n_i B_i) per stage."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    ns = np.asarray(n, dtype=float)
    if not (A.shape == B.shape == ns.shape):
        raise ValueError("A, B and n must have the same length")
    if np.any(B <= 0.0) or np.any(ns < 1.0):
        raise ValueError("stage denominators must be positive, multiplicities >= 1")
    return np.cumsum(ns * A) / np.cumsum(ns * B)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    current: str
    function: str
    numerator: float
    denominator: float
    ratio: float
    target: float
    deviation: float             # absolute, on the normalized ratio
    contact_deviation: float = 0.0   # relative, on the unnormalized contact value
    k: int | None = None


@dataclass(frozen=True)
class EquidistReport:
    metric: str                      # short metric hash
    describe: str
    rows: tuple[ReportRow, ...]
    schedule: tuple[int, ...] | None = None

    def to_csv(self) -> str:
        lines = ["metric,current,function,ratio,target,deviation"]
        for r in self.rows:
            lines.append(
                f"{self.metric},{r.current},{r.function},"
                f"{format(r.ratio, '.17g')},{format(r.target, '.17g')},"
                f"{format(r.deviation, '.17g')}")
        return "\n".join(lines) + "\n"

    def to_svg(self) -> str:
        """Bar chart of log-deviations, grouped by current."""
        floor = 1e-16
        bar_w, gap, h0, top = 18, 6, 220, 30
        n = len(self.rows)
        width = 60 + n * (bar_w + gap) + 20
        height = h0 + top + 60
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" font-family="monospace" font-size="10">',
            f'<text x="10" y="16">|ratio - target| ({self.describe})</text>',
        ]
        for i, r in enumerate(self.rows):
            mag = -math.log10(max(r.deviation, floor))      # 0 .. 16
            bh = int(round(h0 * min(mag, 16.0) / 16.0))
            x = 60 + i * (bar_w + gap)
            y = top + (h0 - bh)
            parts.append(
                f'<rect x="{x}" y="{y}" width="{bar_w}" height="{bh}" '
                f'fill="#4477aa"/>')
            parts.append(
                f'<text x="{x}" y="{top + h0 + 12}" '
                f'transform="rotate(45 {x} {top + h0 + 12})">'
                f'{r.current}:{r.function}</text>')
            parts.append(
                f'<text x="{x}" y="{y - 3}">{r.deviation:.1e}</text>')
        parts.append(
            f'<line x1="55" y1="{top + h0}" x2="{width - 15}" y2="{top + h0}" '
            f'stroke="black"/>')
        parts.append('</svg>')
        return "\n".join(parts) + "\n"


def discrepancy_report(m: FinslerMetric, currents: Sequence[Current],
                       functions: Sequence[tuple[str, Callable[[np.ndarray], float]]],
                       tol: float = 1e-12,
                       target_n: tuple[int, int] = (128, 128),
                       target_tol: float = 1e-9,
                       schedule: Sequence[int] | None = None) -> EquidistReport:
    """Ratios against targets for every (current, test function) pair.

    Orbit line integrals are cached by orbit id, so nested families (each
    current extending the previous) pay for each orbit once.
    """
    fs = [f for _, f in functions]
    targets = [target(m, f, n=target_n, tol=target_tol) for _, f in functions]
    cache: dict[str, np.ndarray] = {}
    rows: list[ReportRow] = []
    for cur in currents:
        if not cur.orbits:
            raise EmptyCurrent(f"current {cur.label!r} has no orbits")
        if cur.metric_hash != m.metric_hash():
            raise ValueError(f"current {cur.label!r} built for a different metric")
        num = np.zeros(len(fs))
        den = 0.0
        for w, orb in zip(cur.weights, cur.orbits):
            if orb.orbit_id not in cache:
                cache[orb.orbit_id] = line_pair(m, orb.state, orb.period, fs,
                                                tol=tol)
            num += w * cache[orb.orbit_id]
            den += w * orb.period
        for j, (name, _) in enumerate(functions):
            r = float(num[j] / den)
            dev = abs(r - targets[j])
            rows.append(ReportRow(cur.label, name, float(num[j]), den, r,
                                  targets[j], dev,
                                  dev / max(abs(targets[j]), _SCALE_FLOOR),
                                  cur.k))
    return EquidistReport(m.metric_hash()[:12], m.describe(), tuple(rows),
                          None if schedule is None else tuple(schedule))


# ---------------------------------------------------------------------------
# stock families and test functions
# ---------------------------------------------------------------------------

def torus_direction_current(m: FinslerMetric, max_class: int,
                            verify_tol: float = 1e-11) -> Current:
    """Equal weights on every primitive line direction up to max_class."""
    orbits = tuple(catalog_family(m, max_class=max_class, verify_tol=verify_tol))
    return Current(f"dirs{max_class}", orbits, (1.0,) * len(orbits),
                   orbits[0].metric_hash, k=max_class)


def torus_test_functions(m: FinslerMetric) -> list[tuple[str, Callable]]:
    """Low trigonometric modes on the torus chart (first entry constant)."""
    L = m.atlas.chart.periods
    kx = 2.0 * math.pi / L[0]
    ky = 2.0 * math.pi / L[1]
    return [
        ("one", lambda q: 1.0),
        ("cos_x", lambda q: math.cos(kx * q[0])),
        ("sin_y", lambda q: math.sin(ky * q[1])),
        ("cos_x+y", lambda q: math.cos(kx * q[0] + ky * q[1])),
        ("cos_x*sin_y", lambda q: math.cos(kx * q[0]) * math.sin(ky * q[1])),
    ]


def revolution_test_functions(m: FinslerMetric) -> list[tuple[str, Callable]]:
    """Legendre modes in normalized u times trigonometric modes in v."""
    chart = m.atlas.chart
    if chart.periodic[0]:
        lo, span = 0.0, chart.periods[0]
    else:
        lo, hi = chart.bounds[0]
        span = hi - lo
    Lv = chart.periods[1] if chart.periodic[1] else \
        (chart.bounds[1][1] - chart.bounds[1][0])
    kv = 2.0 * math.pi / Lv

    def xi(q):
        return 2.0 * (q[0] - lo) / span - 1.0

    def p2(q):
        x = xi(q)
        return 0.5 * (3.0 * x * x - 1.0)

    return [
        ("one", lambda q: 1.0),
        ("p1", xi),
        ("p2", p2),
        ("p1*cos_v", lambda q: xi(q) * math.cos(kv * q[1])),
        ("p2*sin_v", lambda q: p2(q) * math.sin(kv * q[1])),
    ]

"""Charts and atlases for the supported surfaces.

Two kinds of coordinate charts cover everything the package works on:

* flat periodic charts for tori, coordinates ``(q1, q2)`` with each axis
  identified modulo its period;
* revolution charts ``(u, v)`` with ``v`` an angle (period ``2*pi``) and ``u``
  ranging over an interval whose ends may be rotational poles (where the
  profile radius vanishes) or plain chart boundaries.

Trajectories integrate in unwrapped coordinates; wrapping is applied only when
comparing points, so displacement classes on the torus stay readable.  An
atlas holds at most two charts plus the transition maps between them; the
built-in surfaces are covered by one chart (with the poles of a sphere
declared explicitly, not covered), and tori may optionally carry a second,
shifted chart so that transition behaviour is exercised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import OutsideChart, PoleProximity

U_MARGIN_DEFAULT = 1e-3


@dataclass(frozen=True)
class Chart:
    """A single 2d coordinate chart.

    ``periodic[i]`` marks axis ``i`` as an angle with period ``periods[i]``;
    aperiodic axes use ``bounds[i]`` as their closed working interval.
    ``pole_at`` flags which ends of an aperiodic axis are rotational poles.
    """

    name: str
    coord_names: tuple[str, str]
    periodic: tuple[bool, bool]
    periods: tuple[float, float] = (1.0, 1.0)
    bounds: tuple[tuple[float, float], tuple[float, float]] = (
        (-math.inf, math.inf),
        (-math.inf, math.inf),
    )
    pole_at: tuple[tuple[bool, bool], tuple[bool, bool]] = (
        (False, False),
        (False, False),
    )
    u_margin: float = U_MARGIN_DEFAULT

    def wrap(self, q: np.ndarray) -> np.ndarray:
        """Canonical representative: periodic axes reduced to [0, period)."""
        q = np.asarray(q, dtype=float).copy()
        for i in range(2):
            if self.periodic[i]:
                q[i] = q[i] % self.periods[i]
        return q

    def wrap_diff(self, dq: np.ndarray) -> np.ndarray:
        """Shortest representative of a coordinate difference."""
        dq = np.asarray(dq, dtype=float).copy()
        for i in range(2):
            if self.periodic[i]:
                L = self.periods[i]
                dq[i] = (dq[i] + 0.5 * L) % L - 0.5 * L
        return dq

    def distance(self, qa: np.ndarray, qb: np.ndarray) -> float:
        """Euclidean chart distance with periodic axes reduced."""
        return float(np.linalg.norm(self.wrap_diff(np.asarray(qa) - np.asarray(qb))))

    def check_inside(self, q: np.ndarray) -> None:
        """Raise if ``q`` leaves the working region.

        Crossing into the margin band next to a declared pole raises
        :class:`PoleProximity`; leaving the chart otherwise raises
        :class:`OutsideChart`.
        """
        for i in range(2):
            if self.periodic[i]:
                continue
            lo, hi = self.bounds[i]
            x = q[i]
            if x < lo or x > hi:
                raise OutsideChart(
                    f"{self.coord_names[i]}={x:.6g} outside [{lo:.6g}, {hi:.6g}] "
                    f"of chart {self.name!r}"
                )
            if self.pole_at[i][0] and x < lo + self.u_margin:
                raise PoleProximity(
                    f"{self.coord_names[i]}={x:.6g} within margin {self.u_margin:g} "
                    f"of the pole at {lo:.6g}"
                )
            if self.pole_at[i][1] and x > hi - self.u_margin:
                raise PoleProximity(
                    f"{self.coord_names[i]}={x:.6g} within margin {self.u_margin:g} "
                    f"of the pole at {hi:.6g}"
                )

    def interior_contains(self, q: np.ndarray) -> bool:
        try:
            self.check_inside(np.asarray(q, dtype=float))
        except (OutsideChart, PoleProximity):
            return False
        return True


@dataclass(frozen=True)
class Transition:
    """Coordinate change between two charts of one atlas.

    ``forward``/``inverse`` map points, ``jacobian`` is the (constant, for all
    built-ins) matrix of ``forward``; covectors transform by its inverse
    transpose.
    """

    src: int
    dst: int
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    jacobian: np.ndarray

    def push_covector(self, p: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.jacobian.T, np.asarray(p, dtype=float))


@dataclass(frozen=True)
class ChartAtlas:
    charts: tuple[Chart, ...]
    transitions: tuple[Transition, ...] = ()

    def __post_init__(self) -> None:
        if not 1 <= len(self.charts) <= 2:
            raise ValueError("an atlas carries one or two charts")

    @property
    def chart(self) -> Chart:
        """The primary chart (all dynamics runs here)."""
        return self.charts[0]

    def check_transitions(self, samples: Sequence[np.ndarray], tol: float = 1e-12) -> float:
        """Max round-trip defect of the transition maps over ``samples``."""
        worst = 0.0
        for tr in self.transitions:
            for q in samples:
                q = np.asarray(q, dtype=float)
                back = tr.inverse(tr.forward(q))
                worst = max(worst, float(np.max(np.abs(self.charts[tr.src].wrap_diff(back - q)))))
        if worst > tol:
            raise OutsideChart(f"transition round-trip defect {worst:.3e} exceeds {tol:g}")
        return worst


# -- torus charts -------------------------------------------------------------

def flat_torus_atlas(periods: tuple[float, float] = (1.0, 1.0), two_charts: bool = False) -> ChartAtlas:
    """Atlas of the torus R^2 / (L1 Z x L2 Z).

    With ``two_charts`` a second copy shifted by half a period in each axis is
    added; the transition is a translation, so covectors are unchanged.
    """
    base = Chart("torus", ("q1", "q2"), (True, True), periods=periods)
    if not two_charts:
        return ChartAtlas((base,))
    shift = np.array([0.5 * periods[0], 0.5 * periods[1]])
    shifted = Chart("torus_shifted", ("q1", "q2"), (True, True), periods=periods)
    eye = np.eye(2)
    tr = Transition(0, 1, lambda q: np.asarray(q) - shift, lambda q: np.asarray(q) + shift, eye)
    tr_back = Transition(1, 0, lambda q: np.asarray(q) + shift, lambda q: np.asarray(q) - shift, eye)
    return ChartAtlas((base, shifted), (tr, tr_back))


# -- revolution charts ---------------------------------------------------------

@dataclass(frozen=True)
class RevolutionProfile:
    """Radius profile r(u) of a surface of revolution, with derivative.

    ``u_range`` is the open interval of the chart; ``poles`` flags ends where
    r vanishes (sphere caps).  ``u_periodic`` marks profiles defined on a full
    circle in u (a torus of revolution), where meridians close up.
    """

    name: str
    r: Callable[[float], float]
    dr: Callable[[float], float]
    u_range: tuple[float, float]
    poles: tuple[bool, bool] = (False, False)
    u_periodic: bool = False

    def value(self, u: float) -> float:
        return float(self.r(u))


def sphere_profile() -> RevolutionProfile:
    """Unit round sphere: r(u) = sin u on (0, pi), poles at both ends."""
    return RevolutionProfile("sphere", math.sin, math.cos, (0.0, math.pi), (True, True))


def cosh_profile(half_width: float = 1.5) -> RevolutionProfile:
    """Catenoid-like neck r(u) = cosh u on (-half_width, half_width)."""
    return RevolutionProfile("cosh", math.cosh, math.sinh, (-half_width, half_width))


def revolution_torus_profile(major: float = 2.0, minor: float = 1.0) -> RevolutionProfile:
    """Torus of revolution r(u) = major + minor*cos u, u periodic on [0, 2*pi)."""
    return RevolutionProfile(
        "revolution_torus",
        lambda u: major + minor * math.cos(u),
        lambda u: -minor * math.sin(u),
        (0.0, 2.0 * math.pi),
        u_periodic=True,
    )


def expression_profile(name: str, r: Callable[[float], float], u_range: tuple[float, float],
                       poles: tuple[bool, bool] = (False, False),
                       u_periodic: bool = False) -> RevolutionProfile:
    """Profile from a plain callable; derivative by 5-point central differences."""
    def dr(u: float, _r=r) -> float:
        h = 1e-4 * max(1.0, abs(u))
        return (-_r(u + 2 * h) + 8 * _r(u + h) - 8 * _r(u - h) + _r(u - 2 * h)) / (12 * h)

    return RevolutionProfile(name, r, dr, u_range, poles, u_periodic)


def revolution_atlas(profile: RevolutionProfile, u_margin: float = U_MARGIN_DEFAULT) -> ChartAtlas:
    chart = Chart(
        profile.name,
        ("u", "v"),
        (profile.u_periodic, True),
        periods=(profile.u_range[1] - profile.u_range[0], 2.0 * math.pi),
        bounds=(profile.u_range, (-math.inf, math.inf)),
        pole_at=(profile.poles, (False, False)),
        u_margin=u_margin,
    )
    return ChartAtlas((chart,))

"""Error taxonomy shared by the whole package.

Every failure mode that callers are expected to catch gets its own class, and
every class carries a process exit code so the command line tool can map
failures to distinct, documented exit statuses:

    2  configuration (parse / validation)
    3  metric domain (bad vectors, chart violations, lost convexity of a norm)
    4  integration (step underflow, pole bands, quadrature refinement)
    5  orbit search (Newton divergence, missing returns, tangential sections)
    6  frames and return maps (degenerate fibers, non-symplectic pairings)
    7  perturbation construction (bad windows, inadmissible forms, budgets)
"""

from __future__ import annotations


class ReebflowError(Exception):
    """Base class; ``exit_code`` is what the CLI returns on this failure."""

    exit_code = 1


# -- configuration ----------------------------------------------------------

class ConfigError(ReebflowError):
    exit_code = 2


class ParseError(ConfigError):
    """Config text is not syntactically valid; message carries line/column."""


class ValidationError(ConfigError):
    """Config parsed but violates the schema (unknown key, bad value)."""


# -- metric domain -----------------------------------------------------------

class DomainError(ReebflowError):
    exit_code = 3


class ZeroVector(DomainError):
    """Tangent vector below the zero threshold where a norm is undefined."""


class ZeroCovector(DomainError):
    """Cotangent vector below the zero threshold."""


class OutsideChart(DomainError):
    """Point does not lie in any chart's closed working region."""


class NotPositiveDefinite(DomainError):
    """Fundamental tensor lost strict convexity at some sample."""


class NotUnitSpeed(DomainError):
    """Operation requires a unit vector and got one off the unit level."""


class MaximizerNotFound(DomainError):
    """Angular support-function solve failed to bracket or converge."""


class DegenerateFiber(DomainError):
    """Dual fiber too flat/irregular for a boundary quadrature."""


class ConvexityLost(DomainError):
    """Requested perturbation size leaves the strongly convex regime."""


# -- integration -------------------------------------------------------------

class IntegrationError(ReebflowError):
    exit_code = 4


class StepUnderflow(IntegrationError):
    """Adaptive step fell below the hard floor while error stayed high."""


class PoleProximity(IntegrationError):
    """Trajectory entered the excluded band around a rotational pole."""


class NoConvergence(IntegrationError):
    """An iterative numerical solve ran out of iterations."""


class QuadratureUnderResolved(IntegrationError):
    """Two successive quadrature refinements disagree beyond tolerance."""


# -- orbit search ------------------------------------------------------------

class OrbitError(ReebflowError):
    exit_code = 5


class NoReturn(OrbitError):
    """Flow never recrossed the section within the time horizon."""


class Tangency(OrbitError):
    """Section crossing too tangential for a reliable return map."""


class NewtonDiverged(OrbitError):
    """Shooting iteration failed to contract."""


class UnknownFamily(OrbitError):
    """No analytic orbit catalog is available for this metric family."""


class UnknownOrbit(OrbitError):
    """Requested orbit id is not in the catalog."""


# -- frames / return maps ----------------------------------------------------

class FrameError(ReebflowError):
    exit_code = 6


class FramePairingSingular(FrameError):
    """Candidate frame has near-zero symplectic pairing."""


class NotSymplectic(FrameError):
    """Return map determinant strayed from one beyond tolerance."""


# -- perturbation construction ------------------------------------------------

class PerturbationError(ReebflowError):
    exit_code = 7


class WindowTooWide(PerturbationError):
    """Requested support does not fit inside the allowed region."""


class SelfIntersection(PerturbationError):
    """Orbit re-enters its own tube inside the window."""


class WindowOutsideRegularSet(PerturbationError):
    """Window touches points where the tube coordinates degenerate."""


class InadmissibleForm(PerturbationError):
    """Perturbation coefficients violate the admissibility pattern."""


class OutsideWindow(PerturbationError):
    """Orbit-time argument falls outside the perturbation window."""


class BudgetExhausted(PerturbationError):
    """Search consumed its amplitude/iteration budget without success."""


class EmptyCurrent(ReebflowError):
    """Averaging over an empty orbit collection."""

    exit_code = 5

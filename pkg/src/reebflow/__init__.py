"""Geodesic flows on Finsler surfaces: duality, closed orbits, return maps,
compactly supported metric perturbations, and equidistribution diagnostics."""

from .charts import (Chart, ChartAtlas, RevolutionProfile, cosh_profile,
                     flat_torus_atlas, revolution_atlas,
                     revolution_torus_profile, sphere_profile)
from .config import (MetricConfig, RunConfig, build_metric, parse_config,
                     parse_config_string)
from .equidist import (Current, EquidistReport, cesaro_schedule,
                       discrepancy_report, equal_weight, pairings, ratio,
                       revolution_test_functions, running_ratio, target,
                       torus_direction_current, torus_test_functions,
                       volume_identity)
from .errors import (BudgetExhausted, ConfigError, ConvexityLost,
                     DegenerateFiber, DomainError, EmptyCurrent, FrameError,
                     IntegrationError, NewtonDiverged, NoReturn, OrbitError,
                     ParseError, PerturbationError, QuadratureUnderResolved,
                     ReebflowError, SelfIntersection, UnknownFamily,
                     UnknownOrbit, ValidationError, WindowTooWide)
from .flow import (Trajectory, UnitCotangentState, conjugacy_error, integrate,
                   line_pair, reeb_vector, spray_integrate, trajectory_to_csv,
                   trajectory_to_svg, unit_state)
from .local_model import (lemma31_fd_oracle, lemma31_prediction, lemma31_table,
                          make_admissible, model_linearized, plateau_bump,
                          random_admissible)
from .metrics import (FinslerMetric, MatrixField, RandersMetric,
                      RiemannianMetric, VectorField2, conformal_torus,
                      constant_form, constant_matrix, dual_norm, eval_metric,
                      fiber_area, fiber_area_montecarlo, fundamental_tensor,
                      hilbert_pair, legendre, legendre_inverse,
                      metric_distance, randers_torus, revolution_metric,
                      riemannian_torus, rotating_sphere_metric,
                      surface_integral, zermelo_metric)
from .orbits import (ClosedOrbit, catalog_family, closure_residual,
                     find_closed_orbit)
from .perturb import (PerturbationSpec, PerturbedMetric, Tube, build_tube,
                      check_orbit_preserved, convexity_bound, convexity_margin,
                      h_derivatives, measured_s_derivative, nondegenerify,
                      perturbation_stops, perturbed_metric,
                      perturbed_poincare_map, poincare_s_derivative,
                      spec_from_dict, spec_to_dict)
from .poincare import (Classification, ContactFrame, PoincareMap,
                       classification_record, classify, eigenvalue_margin,
                       frame_at, iterate_class, poincare_map,
                       reduce_monodromy, variational_transport)

__version__ = "0.1.0"

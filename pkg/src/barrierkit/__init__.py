"""Certified boundary barriers, Hardy constants, and singular Dirichlet
solves for weighted quasilinear operators on simplicial meshes."""

from .errors import (BarrierkitError, MeshingError, GeometryError, WeightError,
                     SolverError, CapacityError, CalibrationError,
                     BarrierError, MajorantError, ConfigError)
from .geometry import (DomainSpec, Mesh, DistanceField, ScaleLadder,
                       interval_domain, polygon_domain, unit_square, l_shape,
                       slit_square, disk_domain, build_mesh,
                       graded_interval_mesh, distance_field, gamma_distance,
                       boundary_distance, greedy_net, build_ladder,
                       ambient_ball_mesh, point_in_domain)
from .weights import (WeightDescriptor, OperatorDescriptor, AxiomReport,
                      WeightDiagnostics, constant_weight, point_power_weight,
                      boundary_power_weight, eval_weight, make_operator,
                      eval_operator, axiom_sampler, ball_weight_mass,
                      measure_doubling)
from .solver import (DiscreteField, SolveInfo, ResidualMeasure, P1System,
                     CheckResult, EPS_SOLVE, EPS_SCHEDULE, solve_dirichlet,
                     residual_measure, supersolution_check, glueing_check,
                     comparison_check, harnack_diagnostic, oscillation_probe)
from .capacity import (CondenserSpec, CdcReport, condenser, capacity,
                       cdc_ratio, estimate_gamma)
from .barrier import (CalibratedConstants, LayerField, BarrierLadder,
                      constants_from, auxiliary_function, calibrate,
                      layer_function, assemble_barrier, verify_barrier,
                      transform_barrier, build_barrier)
from .hardy import (HardyReport, hardy_pair, picone_check, sweep_functions,
                    hardy_sweep, estimate_best_constant, hardy_report)
from .singular import (SingularSource, SingularLoad, TruncationRun,
                       solve_singular, verify_theorem_bound, uniqueness_probe)

__version__ = "0.1.0"

"""Goal-oriented adaptive finite elements for nonsymmetric elliptic
Dirichlet problems in two dimensions.

The package covers the full adaptive pipeline: conforming triangulations
with newest-vertex bisection (:mod:`goafem.mesh`), problem data and
manufactured cases (:mod:`goafem.problem`), Lagrange assembly and exact
inter-mesh transfer (:mod:`goafem.fem`), tolerance-controlled solves
(:mod:`goafem.solver`), residual a posteriori estimation
(:mod:`goafem.estimator`), Dorfler marking (:mod:`goafem.marking`), the
adaptive driver with its theory diagnostics (:mod:`goafem.driver`), and
a batch CLI (:mod:`goafem.cli`).
"""

from .mesh import (Mesh, MeshError, MeshStats, RefinementReport,
                   assign_refinement_edges, lshape_mesh, overlay,
                   unit_square_mesh)
from .problem import (CoefficientField, Domain, LSHAPE, ManufacturedCase,
                      ProblemData, ProblemError, SQUARE, ValidationReport,
                      constant, dual_data, manufactured, problem_names,
                      validate)
from .fem import (FeSolution, FeSpace, SparseSystem, assemble,
                  assemble_dual, build_space, carry, energy_norm_diff,
                  goal_value, l2_norm_diff, triangle_quadrature)
from .solver import SolveReport, SolverError, solve, solve_dense_reference
from .estimator import (DataEstimates, EstimatorError, IndicatorField,
                        data_estimates, estimator_total, indicators,
                        oscillation_total)
from .marking import (MarkingError, dorfler_mark, minimal_cardinality,
                      union_mark, verify_dorfler)
from .driver import (ConvergenceHistory, ConvergenceRecord, DriverConfig,
                     SolverFailure, fit_rate, quasi_error, run,
                     run_uniform, total_error)
from .cli import (ConfigError, RunConfig, compare_runs, duality_study,
                  emit_csv, emit_gnuplot, emit_vtk, main, parse_config,
                  parse_config_text, serialize_config)

__version__ = "0.1.0"

__all__ = [
    "Mesh", "MeshError", "MeshStats", "RefinementReport",
    "assign_refinement_edges", "lshape_mesh", "overlay", "unit_square_mesh",
    "CoefficientField", "Domain", "LSHAPE", "ManufacturedCase",
    "ProblemData", "ProblemError", "SQUARE", "ValidationReport",
    "constant", "dual_data", "manufactured", "problem_names", "validate",
    "FeSolution", "FeSpace", "SparseSystem", "assemble", "assemble_dual",
    "build_space", "carry", "energy_norm_diff", "goal_value",
    "l2_norm_diff", "triangle_quadrature",
    "SolveReport", "SolverError", "solve", "solve_dense_reference",
    "DataEstimates", "EstimatorError", "IndicatorField", "data_estimates",
    "estimator_total", "indicators", "oscillation_total",
    "MarkingError", "dorfler_mark", "minimal_cardinality", "union_mark",
    "verify_dorfler",
    "ConvergenceHistory", "ConvergenceRecord", "DriverConfig",
    "SolverFailure", "fit_rate", "quasi_error", "run", "run_uniform",
    "total_error",
    "ConfigError", "RunConfig", "compare_runs", "duality_study",
    "emit_csv", "emit_gnuplot", "emit_vtk", "main", "parse_config",
    "parse_config_text",
    "serialize_config",
]

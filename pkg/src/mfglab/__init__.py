"""Solvers and long-horizon experiments for deterministic first-order
mean field games with non-monotone coupling costs.

Static equilibria by damped best response, ergodic triples by Dirichlet
eikonal sweeping, finite-horizon games by a backward semi-Lagrangian HJB /
forward particle-transport fixed point, and a horizon sweep measuring the
long-time collapse onto the minimizing set.
"""

__version__ = "0.1.0"

from .errors import (
    AssumptionViolationError,
    ConfigError,
    DomainEscapeError,
    InvalidMeasureError,
    MfgError,
    ModelValidationError,
    SizeCapError,
    SolverError,
    StaticResidualError,
)
from .grid_geometry import NodeSet, SpatialGrid, distance_to_box, distance_to_set
from .measures import (
    DiscreteMeasure,
    MeasurePath,
    mix,
    mix_paths,
    push_forward,
    sample_from_density,
    support_distance,
    wasserstein1,
    wasserstein1_capped,
)
from .cost_models import (
    BUILTIN_MODELS,
    CostFunctional,
    build_model,
    default_eps_min,
    gamma_estimate,
    model_congestion,
    model_fG_plus_g,
    model_separated_kernel,
    slice_stats,
    validate_assumptions,
)
from .static_game import (
    StaticSolveResult,
    best_response,
    constant_damping,
    harmonic_damping,
    residual,
    solve_static,
)
from .eikonal_ergodic import (
    ErgodicTriple,
    build_ergodic_triple,
    continuity_residual,
    converse_check,
    mather_identity_check,
    solve_eikonal,
    value_function_crosscheck,
)
from .finite_horizon import (
    MfgEquilibrium,
    TrajectoryStats,
    ValueField,
    a_priori_report,
    control_lattice,
    occupational_fractions,
    occupational_measure,
    solve_hjb_backward,
    solve_mfg,
    transport_forward,
)
from .asymptotics import (
    SweepParams,
    SweepRecord,
    bounded_ratio,
    nonincreasing_with_slack,
    run_sweep,
    semilimit_surrogates,
    singleton_limit_check,
    stable_within,
)

__all__ = [
    "__version__",
    "AssumptionViolationError",
    "BUILTIN_MODELS",
    "ConfigError",
    "CostFunctional",
    "DiscreteMeasure",
    "DomainEscapeError",
    "ErgodicTriple",
    "InvalidMeasureError",
    "MeasurePath",
    "MfgEquilibrium",
    "MfgError",
    "ModelValidationError",
    "NodeSet",
    "SizeCapError",
    "SolverError",
    "SpatialGrid",
    "StaticResidualError",
    "StaticSolveResult",
    "SweepParams",
    "SweepRecord",
    "TrajectoryStats",
    "ValueField",
    "a_priori_report",
    "best_response",
    "bounded_ratio",
    "build_ergodic_triple",
    "build_model",
    "constant_damping",
    "continuity_residual",
    "control_lattice",
    "converse_check",
    "default_eps_min",
    "distance_to_box",
    "distance_to_set",
    "gamma_estimate",
    "harmonic_damping",
    "mather_identity_check",
    "mix",
    "mix_paths",
    "model_congestion",
    "model_fG_plus_g",
    "model_separated_kernel",
    "nonincreasing_with_slack",
    "occupational_fractions",
    "occupational_measure",
    "push_forward",
    "residual",
    "run_sweep",
    "sample_from_density",
    "semilimit_surrogates",
    "singleton_limit_check",
    "slice_stats",
    "solve_eikonal",
    "solve_hjb_backward",
    "solve_mfg",
    "solve_static",
    "stable_within",
    "support_distance",
    "transport_forward",
    "validate_assumptions",
    "wasserstein1",
    "wasserstein1_capped",
]

"""Finite-difference solver and verification harness for ``-Lap u = f / u**beta``."""

from .errors import (
    ConfigError,
    ContractError,
    DataError,
    NonConvergenceError,
    PreconditionError,
    SingularEllipticError,
)
from .grid import (
    Grid,
    Interval,
    RadialAnnulus,
    RadialBall,
    Rectangle,
    ScalarField,
    assemble_neg_laplacian,
    build_grid,
    h1_seminorm_sq,
    parse_domain,
    power_field,
    read_field_csv,
    reflect,
    sample,
    solve_linear,
    write_field_csv,
)
from .solver import (
    ContinuationSchedule,
    Problem,
    RegularizedConfig,
    SolveReport,
    dirichlet_excess,
    interior_min,
    solve_regularized,
    solve_singular,
)
from .variational import (
    ObstacleProblem,
    TruncationParams,
    comparison_certificate,
    g_k,
    hat_residuals,
    minimize_obstacle,
    phi_k,
    vi_residual,
)
from .verify import (
    VerificationCase,
    VerificationReport,
    boundary_exponent,
    comparison_check,
    energy_class_diagnostic,
    run_suite,
    scaling_check,
    symmetry_check,
    uniqueness_check,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "NonConvergenceError",
    "PreconditionError",
    "SingularEllipticError",
    "Grid",
    "Interval",
    "RadialAnnulus",
    "RadialBall",
    "Rectangle",
    "ScalarField",
    "assemble_neg_laplacian",
    "build_grid",
    "h1_seminorm_sq",
    "parse_domain",
    "power_field",
    "read_field_csv",
    "reflect",
    "sample",
    "solve_linear",
    "write_field_csv",
    "ContinuationSchedule",
    "Problem",
    "RegularizedConfig",
    "SolveReport",
    "dirichlet_excess",
    "interior_min",
    "solve_regularized",
    "solve_singular",
    "ObstacleProblem",
    "TruncationParams",
    "comparison_certificate",
    "g_k",
    "hat_residuals",
    "minimize_obstacle",
    "phi_k",
    "vi_residual",
    "VerificationCase",
    "VerificationReport",
    "boundary_exponent",
    "comparison_check",
    "energy_class_diagnostic",
    "run_suite",
    "scaling_check",
    "symmetry_check",
    "uniqueness_check",
]

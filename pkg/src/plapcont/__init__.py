"""Continuation and verification toolkit for singular p-Laplacian problems on an interval."""

__version__ = "0.1.0"

from .continuation import (  # noqa: E402
    Branch,
    BranchPoint,
    ContinuationConfig,
    count_solutions_at,
    detect_fold,
    epsilon_sweep,
    max_location_trace,
    trace_branch,
    truncation_asymptote_estimate,
    truncation_sweep,
)
from .discretization import GridFunction, Mesh1D, assemble_jacobian, assemble_residual  # noqa: E402
from .eigen import EigenResult, first_eigenpair, rayleigh_quotient  # noqa: E402
from .errors import (  # noqa: E402
    ConfigError,
    DomainError,
    NoConvergence,
    NoFold,
    PlapcontError,
    PositivityLoss,
    QueryTooCloseToFold,
    StepFailure,
    TailTooShort,
)
from .problem import (  # noqa: E402
    ProblemSpec,
    certificate_threshold,
    g_eps,
    g_eps_minimizer,
    lambda_star_upper_bound,
    nonexistence_certificate,
    singular_term,
    subsuper_constants,
    truncated_power,
    uniqueness_ball_radius,
    zeta,
)
from .solvers import (  # noqa: E402
    SolveOptions,
    monotone_iteration_minimal,
    newton_solve,
    sandwich_check,
    solve_singular_base,
    torsion_solution,
)

"""Directional stationarity for difference-of-convex programs.

Solvers (classical DCA plus deterministic and randomized minorant-family
descent), a stationarity certifier, and a reproducible benchmark harness
for DC programs min f = g - h.
"""

__version__ = "0.1.0"

from .core import (
    ConvexG,
    DCProgram,
    EuclideanBall,
    FiniteMaxH,
    GeneralConvexH,
    InsufficientDataError,
    InvalidSpecError,
    IterateRecord,
    MaxInnerItersError,
    NextStepRule,
    OracleError,
    ParamMaxH,
    ProxFriendlyFunction,
    QuadraticForm,
    RunTrace,
    SingularSystemError,
    SmoothConvexFunction,
    SolverConfig,
    SolverError,
    SolverWarning,
    Termination,
    TooManyCentersError,
    UnboundedError,
    active_set,
    as_vector,
    f_value,
    g_value,
    grad_check,
    h_value,
    make_grid_maximizer,
)
from .subsolver import Subproblem, SubSolution, solve, solve_fista, solve_quadratic
from .selectors import (
    Covering,
    Minorant,
    SelectorState,
    cover_ball,
    select_full_active,
    select_param_cover,
    select_singleton,
    select_subgrad_sample,
    select_windowed,
)
from .certify import (
    Certificate,
    Verdict,
    certificate,
    critical_residual,
    default_probe_directions,
    directional_derivative_probe,
    dstat_residual,
    hull_distance,
)
from .drivers import (
    SelectorSpec,
    SubgradientPolicy,
    alg1_run,
    alg2_run,
    alg3_run,
    dca_run,
)
from .problems import ProblemSpec, build_problem, default_x0
from .bench import (
    RateFit,
    RunConfig,
    benchmark_matrix,
    fit_rate,
    load_run_config,
    run_config,
    run_matrix,
)

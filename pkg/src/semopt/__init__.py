"""semopt: matrix-free spectral elements for unsteady PDE-constrained optimization.

Integrates viscous Burgers / advection-diffusion forward in time, runs the
discrete adjoint backward with sum-factorized Jacobian-transpose
applications and binomial checkpointing, and recovers initial conditions by
minimizing a terminal-time misfit with a limited-memory quasi-Newton method.
"""

__version__ = "0.1.0"

from .basis import ElementOperators1D, SpectralBasis1D, diff_matrix, element_operators, gll_rule
from .checkpoint import plan_binomial, plan_store_all, simulate_schedule
from .errors import (
    CheckpointError,
    IntegrationError,
    LineSearchError,
    NumericFailure,
    ScheduleError,
    StepFailure,
    ValidationError,
)
from .grid import Axis, Grid, build_grid, grid_1d, grid_3d, load_field, save_field
from .ops import PdeCoefficients, SemOperator
from .optimize import LbfgsMemory, LineSearchParams, OptimConfig, line_search, minimize
from .problems import AssimilationProblem, make_problem, spectral_error_estimate
from .timeloop import ForwardResult, TsConfig, integrate

__all__ = [
    "__version__",
    "Axis",
    "AssimilationProblem",
    "CheckpointError",
    "ElementOperators1D",
    "ForwardResult",
    "Grid",
    "IntegrationError",
    "LbfgsMemory",
    "LineSearchError",
    "LineSearchParams",
    "NumericFailure",
    "OptimConfig",
    "PdeCoefficients",
    "ScheduleError",
    "SemOperator",
    "SpectralBasis1D",
    "StepFailure",
    "TsConfig",
    "ValidationError",
    "build_grid",
    "diff_matrix",
    "element_operators",
    "gll_rule",
    "grid_1d",
    "grid_3d",
    "integrate",
    "line_search",
    "load_field",
    "make_problem",
    "minimize",
    "plan_binomial",
    "plan_store_all",
    "save_field",
    "simulate_schedule",
    "spectral_error_estimate",
]

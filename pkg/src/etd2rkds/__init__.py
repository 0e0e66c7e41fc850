"""Split exponential Runge-Kutta integration of reaction-diffusion problems on boxes."""
from .operators import Axis, Grid, build_grid, build_operator, spectral_factor
from .problems import DomainError, ProblemSpec, allen_cahn, fhn, get_problem, singular_source
from .rational import eval_scalar, get_scheme, precompute_dvectors
from .stepper import StepAbort, StepperPlan, StepperState, build_plan, integrate, step
from .tensor import Field, load_field, save_field

__version__ = "0.1.0"

__all__ = [
    "Axis",
    "DomainError",
    "Field",
    "Grid",
    "ProblemSpec",
    "StepAbort",
    "StepperPlan",
    "StepperState",
    "allen_cahn",
    "build_grid",
    "build_operator",
    "build_plan",
    "eval_scalar",
    "fhn",
    "get_problem",
    "get_scheme",
    "integrate",
    "load_field",
    "precompute_dvectors",
    "save_field",
    "singular_source",
    "spectral_factor",
    "step",
]

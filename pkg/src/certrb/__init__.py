"""Certified reduced basis methods for parametrized parabolic optimal control."""

__version__ = "0.1.0"

from .mesh import FeSpace, Mesh, build_structured_mesh, make_fespace
from .problems import (
    OcpProblem,
    ParameterBox,
    default_training_set,
    instantiate_graetz_boundary,
    instantiate_graetz_distributed,
    make_problem,
)
from .rb import ReducedModel, error_analysis, greedy_build, reduced_solve
from .spacetime import TimeGrid, assemble_hf_system, assemble_steady_system, solve_hf
from .stability import beta_exact, beta_lb, infsup_sweep

__all__ = [
    "__version__",
    "FeSpace",
    "Mesh",
    "build_structured_mesh",
    "make_fespace",
    "OcpProblem",
    "ParameterBox",
    "default_training_set",
    "instantiate_graetz_boundary",
    "instantiate_graetz_distributed",
    "make_problem",
    "ReducedModel",
    "error_analysis",
    "greedy_build",
    "reduced_solve",
    "TimeGrid",
    "assemble_hf_system",
    "assemble_steady_system",
    "solve_hf",
    "beta_exact",
    "beta_lb",
    "infsup_sweep",
]

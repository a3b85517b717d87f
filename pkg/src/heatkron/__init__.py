"""Kronecker-structured direct solvers for space-time heat equations."""

from .errors import (
    BandStructureError,
    DefectivePencilError,
    DimensionError,
    GeometryError,
    HeatKronError,
    NotPositiveDefiniteError,
    PositivityError,
    SingularBlockError,
    SingularFactorizationError,
)
from .problems import SpaceTimeProblem, fd_problem, galerkin_problem, time_matrices
from .spacetime_solvers import METHODS, SolverPlan, apply, plan, solve
from .tensor_core import count_flops

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "METHODS",
    "SolverPlan",
    "SpaceTimeProblem",
    "apply",
    "count_flops",
    "fd_problem",
    "galerkin_problem",
    "plan",
    "solve",
    "time_matrices",
    "BandStructureError",
    "DefectivePencilError",
    "DimensionError",
    "GeometryError",
    "HeatKronError",
    "NotPositiveDefiniteError",
    "PositivityError",
    "SingularBlockError",
    "SingularFactorizationError",
]

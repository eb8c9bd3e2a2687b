"""Singular problems for the mixed local/nonlocal p-Laplacian on uniform grids."""

from .energy import OperatorParams, mixed_norm_p, weak_residual
from .estimators import MixedSingularSolver, SobolevExtremal
from .extremal import ExtremalResult, extremal_constant, normalization_tau
from .grid import Grid, GridFunction, build_grid, disk_grid, interval_grid
from .kernels import KernelParams
from .solver import SingularProblem, SolveReport, SolverConfig, make_source, solve_singular

__all__ = [
    "ExtremalResult",
    "Grid",
    "GridFunction",
    "KernelParams",
    "MixedSingularSolver",
    "OperatorParams",
    "SingularProblem",
    "SobolevExtremal",
    "SolveReport",
    "SolverConfig",
    "build_grid",
    "disk_grid",
    "extremal_constant",
    "interval_grid",
    "make_source",
    "mixed_norm_p",
    "normalization_tau",
    "solve_singular",
    "weak_residual",
]

__version__ = "0.1.0"

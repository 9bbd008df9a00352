"""Fractional rearrangement optimization: discrete fractional Laplacian, optimal densities,
the normalized fractional obstacle problem and the s -> 1 limit."""

from .dirichlet import ConvergenceError, phi, solve
from .grid import Domain, Field, Grid, GridError, build_grid
from .kernel import KernelParams, ParameterError, getoor_reference, normalization_constant
from .obstacle import ObstacleOptions, ObstacleSolution, equivalence_check, minimize_J
from .operator import NonlocalOperator, assemble, energy
from .rearrangement import (FWOptions, PGOptions, RearrangementClass, RearrangementSolution,
                            solve_frank_wolfe, solve_projected_gradient, verify_structure)
from .slimit import SweepTable, assemble_local, s_sweep, solve_local_rearrangement

__all__ = [
    "ConvergenceError", "Domain", "FWOptions", "Field", "Grid", "GridError", "KernelParams",
    "NonlocalOperator", "ObstacleOptions", "ObstacleSolution", "PGOptions", "ParameterError",
    "RearrangementClass", "RearrangementSolution", "SweepTable", "assemble", "assemble_local",
    "build_grid", "energy", "equivalence_check", "getoor_reference", "minimize_J",
    "normalization_constant", "phi", "s_sweep", "solve", "solve_frank_wolfe",
    "solve_local_rearrangement", "solve_projected_gradient", "verify_structure",
]

"""Super-localized orthogonal decomposition for the Helmholtz equation.

Q1 finite elements on Cartesian grids, patch-local SVD-selected sources and a
coarse Petrov-Galerkin solve, with impedance or PML boundaries.
"""

__version__ = "0.1.0"

from .core import RieszError, StabilityWarning
from .fem import CoefficientField, ProblemSpec
from .grid import FineGrid, build_cartesian_mesh
from .solver import (
    HelmholtzProblem,
    SourceTerm,
    build_slod_basis,
    ideal_method_solution,
    solve_slod,
)

__all__ = [
    "CoefficientField",
    "FineGrid",
    "HelmholtzProblem",
    "ProblemSpec",
    "RieszError",
    "SourceTerm",
    "StabilityWarning",
    "build_cartesian_mesh",
    "build_slod_basis",
    "ideal_method_solution",
    "solve_slod",
]

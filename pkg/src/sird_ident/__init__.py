"""Adjoint-based identification of SIRD epidemic parameters."""

from .discretization import TimeGrid, chebyshev_grid, simpson_integrate
from .model import (
    ParameterVector,
    basic_reproduction_number,
    sensitivity_indices,
    solve_adjoint,
    solve_state,
)
from .objective import (
    ObjectiveSpec,
    ReducedProblem,
    Setup,
    Target,
    evaluate_reduced_cost,
    reduced_gradient,
)

__version__ = "0.1.0"

"""
Monotone finite difference solver for the 2D Monge-Ampere Dirichlet problem.

The equation ``det(D^2 u) = f`` with convex ``u`` is rewritten as a
Hamilton-Jacobi-Bellman equation over a two-parameter control set and
discretized with 7-point stencils where they are monotone and a
semi-Lagrangian wide stencil elsewhere. Policy iteration solves the discrete
system.
"""

__version__ = "0.1.0"

from .controls import ControlPair, G3Rule, Mode, Region, optimize_control
from .diagnostics import (
    ErrorNorms,
    consistency_probe,
    convergence_rates,
    convexity_check,
    error_norms,
    stability_check,
)
from .discretization import GridFunction, assemble_system, verify_m_matrix
from .errors import (
    ConfigurationError,
    DegenerateStencilError,
    InvalidProblemError,
    MongeHJBError,
    NonConvergenceError,
    OutOfDomainError,
    SolverError,
)
from .grid import Domain, Grid, grid_for_resolution, make_grid
from .nonmonotone import solve_nonmonotone
from .problems import Problem, builtin, load_problem
from .solver import Scheme, policy_iteration

__all__ = [
    "ConfigurationError",
    "ControlPair",
    "DegenerateStencilError",
    "Domain",
    "ErrorNorms",
    "G3Rule",
    "Grid",
    "GridFunction",
    "InvalidProblemError",
    "Mode",
    "MongeHJBError",
    "NonConvergenceError",
    "OutOfDomainError",
    "Problem",
    "Region",
    "Scheme",
    "SolverError",
    "assemble_system",
    "builtin",
    "consistency_probe",
    "convergence_rates",
    "convexity_check",
    "error_norms",
    "grid_for_resolution",
    "load_problem",
    "make_grid",
    "optimize_control",
    "policy_iteration",
    "solve_nonmonotone",
    "stability_check",
    "verify_m_matrix",
]

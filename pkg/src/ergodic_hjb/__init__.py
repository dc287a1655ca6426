"""Generalized principal eigenvalues of superquadratic viscous HJB equations.

Finite-difference solvers for the ergodic problem

    lam - Lap u + |Du|^m / m - beta f = 0,   u(0) = 0,   m > 2,

and its gradient-constraint limit max(lam - Lap u - beta f, |Du| - 1) = 0,
together with closed-form oracles, parameter sweeps and a batch CLI.
"""

__version__ = "0.1.0"

from .core import (
    BetaThresholds,
    DomainError,
    EigenEstimate,
    Exponent,
    Geometry,
    GridFunction,
    Method,
    Potential,
    ProblemSpec,
    bracket,
    catalog,
    make_exponent,
    parse_exponent,
    validate_potential,
)
from .discretize import BoundaryCondition, Mesh, assemble_constrained, assemble_discounted, assemble_ergodic
from .solver import NoConvergence, SingularJacobian, SolverError, StepFailure, holder_seminorm, solve_direct_ergodic, solve_discounted
from .eigen import CrossValidationWarning, cross_validate, lambda_via_direct, lambda_via_discount, r_sweep
from .analytic import (
    be0_certificate,
    be0_limit_floor,
    be0_residual,
    coupling_upper_bound,
    exact_beta_plus_nonpositive_f,
    mg_upper_bound,
    multi_solution_family,
    propL_construction,
    propL_data,
)
from .sweeps import InvalidBracket, be0_floor_check, beta_sweep, bisect_beta_minus, bisect_beta_plus, m_sweep, search_beta_plus

__all__ = [name for name in dir() if not name.startswith("_")]

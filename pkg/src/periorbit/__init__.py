"""Branches of forced periodic orbits for coupled systems on manifolds.

The package computes, for T-periodic systems

    x' = A(t) x + c(t) + lambda f1(t, x, y, lambda)
    y' = lambda f2(t, x, y, lambda),   y on M in R^s,

the monodromy of the linear part, its unique periodic solution, the
averaged tangent field on M with its Brouwer degree, fixed points and
indices of the Poincare translation operator, and continuation branches of
periodic-orbit data in (lambda, p, q).
"""

from .average import (
    AveragedField,
    DegreeResult,
    Region,
    ZeroRecord,
    averaged_field,
    brouwer_degree,
    coordinate_field,
    find_zeros,
)
from .branch import (
    Branch,
    BranchSeed,
    ContinuationOptions,
    TTriple,
    branch_to_triples,
    continue_branch,
    reverify_branch,
    seed_branches,
)
from .expr import ExprAst, eval_expression, parse_expression, print_expression
from .linear import (
    Monodromy,
    PeriodicTrajectory,
    ResonanceError,
    check_nonresonance,
    fundamental_matrix,
    periodic_solution_linear,
)
from .poincare import (
    FixedPointRecord,
    IndexReport,
    enumerate_fixed_points,
    factor_index,
    find_fixed_point,
    flow,
    index_formula_check,
    poincare_jacobian,
    translation_index,
)
from .system import (
    PerturbedCoupledSystem,
    builtin_names,
    builtin_scenario,
    check_tangency,
    emit_scenario,
    load_scenario,
)

__version__ = "0.1.0"

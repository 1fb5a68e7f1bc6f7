"""Generalized bipartite state discrimination with sequential measurements:
operator algebra, measurement models, dual solvers with optimality
certificates, group-covariant symmetrization, and the minimax layer."""

from .operators import (
    BipartiteShape,
    Operator,
    conjugate,
    eig_hermitian,
    identity,
    is_psd,
    partial_trace_b,
    projector,
    tensor,
)
from .measurements import (
    AliceMeasure,
    BobFamily,
    ExplicitBobFamily,
    ParametricBobFamily,
    Povm,
    QubitRotationGridFamily,
    SequentialMeasurement,
    assemble_sequential,
    outcome_probabilities,
    validate_povm,
)
from .problems import (
    EQUALITY,
    INEQUALITY,
    GeneralizedProblem,
    build_inconclusive,
    build_min_error,
    constraint_values,
    dual_constraint_operator,
    expand_equalities,
    objective,
    shifted_objectives,
)
from .dual import (
    DualPoint,
    ExtractionError,
    NonconvergenceError,
    PrimalInfeasibleError,
    SolveReport,
    SolverConfig,
    dual_objective,
    extract_primal,
    feasibility_margin,
    solve_dual,
    solve_dual_scalar_x,
    solve_global_dual,
)
from .certificates import (
    CertificateReport,
    certify,
    check_condition_2,
    check_condition_3,
    check_outcome_bound,
    duality_gap,
)
from .symmetry import (
    GroupAction,
    SymmetryError,
    act,
    certify_scalar_x,
    check_problem_symmetry,
    symmetrize_alice,
    symmetrize_dual,
    validate_family_action,
)
from .minimax import (
    MinimaxConfig,
    MinimaxProblem,
    MinimaxResult,
    SimplexPoint,
    check_minimax_symmetry,
    check_saddle,
    mixed_objective,
    objective_vector,
    project_to_simplex,
    reduce_to_p,
    solve_minimax,
    symmetrize_minimax,
)
from . import trine

__all__ = [name for name in dir() if not name.startswith("_")]

"""Worst-case (minimax) layer: several objective functionals, mixing weights
on the simplex, saddle-point solving and verification, and covariant
symmetrization of minimax pairs."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .dual import SolveReport, SolverConfig, solve_dual
from .measurements import AliceMeasure, BobFamily, assemble_sequential
from .operators import BipartiteShape, Operator
from .problems import GeneralizedProblem
from .symmetry import GroupAction, SymmetryError, act, symmetrize_alice

__all__ = [
    "MinimaxProblem",
    "SimplexPoint",
    "MinimaxConfig",
    "MinimaxResult",
    "SaddleReport",
    "mixed_objective",
    "objective_vector",
    "reduce_to_p",
    "project_to_simplex",
    "solve_minimax",
    "check_saddle",
    "check_minimax_symmetry",
    "symmetrize_minimax",
]


@dataclass(frozen=True)
class MinimaxProblem:
    """K objective functionals f_k over a shared constraint structure.

    ``c`` is the K x M grid of objective operators and ``d`` the additive
    offsets; the constraint data (a, b, family) is that of the underlying
    generalized problem.
    """

    shape: BipartiteShape
    c: tuple[tuple[Operator, ...], ...]
    d: tuple[float, ...]
    family: BobFamily
    a: tuple[tuple[Operator, ...], ...] = ()
    b: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(tuple(row) for row in self.c))
        object.__setattr__(self, "d", tuple(float(x) for x in self.d))
        object.__setattr__(self, "a", tuple(tuple(row) for row in self.a))
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if len(self.c) != len(self.d) or not self.c:
            raise ValueError("need one offset per objective functional")
        m = len(self.c[0])
        if any(len(row) != m for row in self.c):
            raise ValueError("every objective row needs one operator per outcome")
        for row in self.c:
            for op in row:
                if op.dim != self.shape.dim:
                    raise ValueError("objective operator dimension mismatch")

    @property
    def K(self) -> int:
        return len(self.c)

    @property
    def M(self) -> int:
        return len(self.c[0])

    @property
    def J(self) -> int:
        return len(self.b)

    @cached_property
    def c_stack(self) -> np.ndarray:
        return np.stack([[op.mat for op in row] for row in self.c])


@dataclass(frozen=True)
class SimplexPoint:
    """Probability vector over the K objective functionals."""

    mu: tuple[float, ...]

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if (mu < -1e-15).any() or abs(mu.sum() - 1.0) > 1e-12:
            raise ValueError("mixing weights must be nonnegative and sum to one")
        object.__setattr__(self, "mu", tuple(float(max(v, 0.0)) for v in mu))

    @staticmethod
    def uniform(k: int) -> "SimplexPoint":
        return SimplexPoint((1.0 / k,) * k)

    def __len__(self) -> int:
        return len(self.mu)


@dataclass(frozen=True)
class MinimaxConfig:
    """Outer-loop controls for the projected subgradient method."""

    max_outer: int = 60
    tol: float = 1e-4
    step0: float = 0.5
    stall_patience: int = 4


@dataclass
class SaddleReport:
    best_response_value: float
    mixed_value: float
    response_gap: float
    worst_guarantee_slack: float
    worst_support_slack: float
    passed_response: bool
    passed_guarantee: bool
    passed_support: bool

    @property
    def passed(self) -> bool:
        return self.passed_response and self.passed_guarantee and self.passed_support


@dataclass
class MinimaxResult:
    mu: SimplexPoint
    alice: AliceMeasure
    value: float
    iterations: int
    upper_value: float
    lower_value: float
    inner_reports: tuple[SolveReport, ...]


def objective_vector(mp: MinimaxProblem, alice: AliceMeasure) -> np.ndarray:
    """Values (f_0, ..., f_{K-1}) of the objective functionals at a measure."""
    fam = alice.family if alice.family is not None else mp.family
    seq = assemble_sequential(alice, fam)
    vals = np.einsum("kmij,mji->k", mp.c_stack, seq.joint.array).real
    return vals + np.asarray(mp.d)


def mixed_objective(mp: MinimaxProblem, mu: SimplexPoint, alice: AliceMeasure) -> float:
    """Mixture sum_k mu_k f_k; bilinear in the mixing and Alice weights."""
    return float(np.asarray(mu.mu) @ objective_vector(mp, alice))


def reduce_to_p(mp: MinimaxProblem, mu: SimplexPoint) -> GeneralizedProblem:
    """Fixed-mixture problem: objective operators averaged with mu.

    Solving it and adding the mu-averaged offsets gives the best-response
    value at mu.
    """
    mu_arr = np.asarray(mu.mu)
    if mu_arr.size != mp.K:
        raise ValueError("mixing weight size does not match the problem")
    c_bar = np.tensordot(mu_arr, mp.c_stack, axes=1)
    c_ops = tuple(Operator(c_bar[m], hermitian_tol=np.inf) for m in range(mp.M))
    return GeneralizedProblem(mp.shape, c_ops, mp.a, mp.b, mp.family)


def _offset(mp: MinimaxProblem, mu: SimplexPoint) -> float:
    return float(np.asarray(mu.mu) @ np.asarray(mp.d))


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the unit simplex (sorting construction)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u + (1.0 - css) / np.arange(1, v.size + 1) > 0)[0][-1]
    theta = (1.0 - css[rho]) / (rho + 1.0)
    return np.maximum(v + theta, 0.0)


def _best_response(mp, mu, cfg) -> tuple[float, AliceMeasure, SolveReport]:
    problem = reduce_to_p(mp, mu)
    _, report = solve_dual(problem, cfg)
    value = report.primal_value + _offset(mp, mu)
    return value, report.alice, report


def solve_minimax(
    mp: MinimaxProblem,
    cfg: SolverConfig = SolverConfig(),
    outer: MinimaxConfig = MinimaxConfig(),
) -> MinimaxResult:
    """Minimize the best-response value over the simplex by projected
    subgradient steps, with a maximin lower bound for the stopping rule.

    The subgradient at mu is the vector of functional values at the inner
    maximizer; the returned measure is the iterate with the best worst-case
    guarantee.
    """
    k = mp.K
    mu = np.full(k, 1.0 / k)
    reports: list[SolveReport] = []
    best_upper = np.inf
    best_mu = mu.copy()
    lower = -np.inf
    best_alice: AliceMeasure | None = None
    stall = 0
    iterations = 0
    for t in range(outer.max_outer):
        iterations = t + 1
        point = SimplexPoint(tuple(mu))
        upper, alice, report = _best_response(mp, point, cfg)
        reports.append(report)
        f_vec = objective_vector(mp, alice)
        guarantee = float(f_vec.min())
        if guarantee > lower:
            lower = guarantee
            best_alice = alice
        if upper < best_upper - 1e-12:
            best_upper = upper
            best_mu = mu.copy()
            stall = 0
        else:
            stall += 1
        if best_upper - lower <= outer.tol:
            break
        if k == 1:
            break
        g = f_vec
        g_norm = float(np.linalg.norm(g))
        if g_norm < 1e-14:
            break
        if stall >= outer.stall_patience and upper > lower:
            step = (upper - lower) / (g_norm * g_norm)
        else:
            step = outer.step0 / (np.sqrt(t + 1.0) * g_norm)
        mu = project_to_simplex(mu - step * g)
    if best_alice is None:
        raise RuntimeError("minimax loop produced no iterate")
    mu_star = SimplexPoint(tuple(best_mu))
    value = mixed_objective(mp, mu_star, best_alice)
    return MinimaxResult(
        mu=mu_star,
        alice=best_alice,
        value=value,
        iterations=iterations,
        upper_value=best_upper,
        lower_value=lower,
        inner_reports=tuple(reports),
    )


def check_saddle(
    mp: MinimaxProblem,
    mu: SimplexPoint,
    alice: AliceMeasure,
    tol: float = 1e-6,
    cfg: SolverConfig = SolverConfig(),
) -> SaddleReport:
    """Verify the saddle conditions: the measure is a best response at mu,
    every functional meets the best-response value, and supported functionals
    are worst ones."""
    best, _, _ = _best_response(mp, mu, cfg)
    mixed = mixed_objective(mp, mu, alice)
    f_vec = objective_vector(mp, alice)
    response_gap = best - mixed
    guarantee_slack = float((f_vec - best).min())
    mu_arr = np.asarray(mu.mu)
    supported = mu_arr > tol
    if supported.any():
        support_slack = float((f_vec.min() - f_vec[supported]).min())
    else:
        support_slack = 0.0
    return SaddleReport(
        best_response_value=best,
        mixed_value=mixed,
        response_gap=response_gap,
        worst_guarantee_slack=guarantee_slack,
        worst_support_slack=support_slack,
        passed_response=bool(response_gap <= tol),
        passed_guarantee=bool(guarantee_slack >= -tol),
        passed_support=bool(support_slack >= -tol),
    )


def check_minimax_symmetry(gr: GroupAction, mp: MinimaxProblem, tol: float = 1e-8) -> bool:
    """True iff the K objective rows, offsets, and constraint data are all
    invariant under the group action (which must carry a perm over k)."""
    if gr.perm_k is None or len(gr.perm_k[0]) != mp.K:
        raise SymmetryError("group action lacks a permutation of the objective index")
    for g in range(len(gr)):
        pk, pm, pj = gr.perm_k[g], gr.perm_m[g], gr.perm_j[g]
        for k in range(mp.K):
            if abs(mp.d[k] - mp.d[pk[k]]) > tol:
                return False
            for m in range(mp.M):
                moved = act(gr, g, mp.c[k][m], "joint")
                if np.abs(moved.mat - mp.c[pk[k]][pm[m]].mat).max() > tol:
                    return False
        for j in range(mp.J):
            if abs(mp.b[j] - mp.b[pj[j]]) > tol:
                return False
            for m in range(mp.M):
                moved = act(gr, g, mp.a[j][m], "joint")
                if np.abs(moved.mat - mp.a[pj[j]][pm[m]].mat).max() > tol:
                    return False
    return True


def symmetrize_minimax(
    gr: GroupAction, mp: MinimaxProblem, mu: SimplexPoint, alice: AliceMeasure
) -> tuple[SimplexPoint, AliceMeasure]:
    """Orbit-average a minimax pair; on a symmetric problem the result is
    again minimax and is covariant."""
    if not check_minimax_symmetry(gr, mp):
        raise SymmetryError("problem is not invariant under the given group action")
    n = len(gr)
    mu_in = np.asarray(mu.mu)
    mu_out = np.zeros_like(mu_in)
    for g in range(n):
        for k in range(mu_in.size):
            mu_out[k] += mu_in[gr.perm_k[g][k]]
    alice_out = symmetrize_alice(gr, alice, family=mp.family)
    return SimplexPoint(tuple(mu_out / n)), alice_out

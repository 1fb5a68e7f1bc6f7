"""Data model for the generalized discrimination problem and its named
specializations, plus the operators appearing on the dual side."""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .measurements import AliceMeasure, BobFamily, assemble_sequential
from .operators import BipartiteShape, DimensionMismatchError, Operator

__all__ = [
    "INEQUALITY",
    "EQUALITY",
    "GeneralizedProblem",
    "expand_equalities",
    "objective",
    "constraint_values",
    "build_min_error",
    "build_inconclusive",
    "shifted_objectives",
    "dual_constraint_operator",
]

INEQUALITY = "inequality"
EQUALITY = "equality"


@dataclass(frozen=True)
class GeneralizedProblem:
    """Linear objective and J linear inequality constraints over sequential
    measurements drawn from a Bob family.

    ``c`` holds the M objective operators on the joint space, ``a`` the J x M
    constraint operators, ``b`` the constraint levels.  ``kinds`` marks each
    constraint as an inequality (<= 0) or an equality; equalities must be
    expanded with :func:`expand_equalities` before solving.
    """

    shape: BipartiteShape
    c: tuple[Operator, ...]
    a: tuple[tuple[Operator, ...], ...] = ()
    b: tuple[float, ...] = ()
    family: BobFamily = None
    kinds: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(self.c))
        object.__setattr__(self, "a", tuple(tuple(row) for row in self.a))
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if not self.kinds:
            object.__setattr__(self, "kinds", (INEQUALITY,) * len(self.b))
        if len(self.a) != len(self.b) or len(self.kinds) != len(self.b):
            raise ValueError("constraint rows, levels, and kinds must agree in length")
        for kind in self.kinds:
            if kind not in (INEQUALITY, EQUALITY):
                raise ValueError(f"unknown constraint kind {kind!r}")
        d = self.shape.dim
        for op in self.c:
            if op.dim != d:
                raise DimensionMismatchError("objective operator dimension mismatch")
        for row in self.a:
            if len(row) != self.M:
                raise ValueError("constraint rows must have one operator per outcome")
            for op in row:
                if op.dim != d:
                    raise DimensionMismatchError("constraint operator dimension mismatch")
        if self.family is not None and self.family.outcomes != self.M:
            raise ValueError(
                f"family outcome count {self.family.outcomes} != problem M {self.M}"
            )
        if self.family is not None and self.family.dim != self.shape.dim_b:
            raise DimensionMismatchError("family dimension does not match shape")

    @property
    def M(self) -> int:
        return len(self.c)

    @property
    def J(self) -> int:
        return len(self.b)

    @cached_property
    def c_stack(self) -> np.ndarray:
        return np.stack([op.mat for op in self.c])

    @cached_property
    def a_stack(self) -> np.ndarray:
        if self.J == 0:
            return np.zeros((0, self.M, self.shape.dim, self.shape.dim), complex)
        return np.stack([[op.mat for op in row] for row in self.a])

    def with_family(self, family: BobFamily) -> "GeneralizedProblem":
        return replace(self, family=family)


def expand_equalities(p: GeneralizedProblem) -> GeneralizedProblem:
    """Replace each equality constraint by the two defining inequalities."""
    if all(kind == INEQUALITY for kind in p.kinds):
        return p
    a, b = [], []
    for row, level, kind in zip(p.a, p.b, p.kinds):
        a.append(row)
        b.append(level)
        if kind == EQUALITY:
            a.append(tuple(-op for op in row))
            b.append(-level)
    return GeneralizedProblem(p.shape, p.c, tuple(a), tuple(b), p.family)


def _resolve_family(p: GeneralizedProblem, alice) -> BobFamily:
    fam = getattr(alice, "family", None)
    return fam if fam is not None else p.family


def objective(p: GeneralizedProblem, alice: AliceMeasure) -> float:
    """Objective sum_m Tr[c_m Pi_m] of a sequential measurement."""
    seq = assemble_sequential(alice, _resolve_family(p, alice))
    return float(np.einsum("mij,mji->", p.c_stack, seq.joint.array).real)


def constraint_values(p: GeneralizedProblem, alice: AliceMeasure) -> np.ndarray:
    """Constraint functions eta_j; the measure is feasible iff all are <= 0."""
    if p.J == 0:
        return np.zeros(0)
    seq = assemble_sequential(alice, _resolve_family(p, alice))
    vals = np.einsum("jmab,mba->j", p.a_stack, seq.joint.array)
    return vals.real - np.asarray(p.b)


def _check_states_priors(states: Sequence[Operator], priors: Sequence[float]):
    priors = np.asarray(priors, dtype=float)
    if len(states) != len(priors):
        raise ValueError("need one prior per state")
    if (priors < -1e-12).any() or abs(priors.sum() - 1.0) > 1e-9:
        raise ValueError("priors must be nonnegative and sum to one")
    for s in states:
        if abs(s.trace() - 1.0) > 1e-8 or np.linalg.eigvalsh(s.mat)[0] < -1e-9:
            raise ValueError("states must be unit-trace PSD operators")
    return priors


def build_min_error(
    states: Sequence[Operator],
    priors: Sequence[float],
    family: BobFamily,
    shape: BipartiteShape | None = None,
) -> GeneralizedProblem:
    """Minimum-error discrimination: maximize the average success probability."""
    priors = _check_states_priors(states, priors)
    if shape is None:
        shape = BipartiteShape(states[0].dim // family.dim, family.dim)
    c = tuple(float(xi) * s for xi, s in zip(priors, states))
    return GeneralizedProblem(shape, c, (), (), family)


def build_inconclusive(
    states: Sequence[Operator],
    priors: Sequence[float],
    p_i: float,
    family: BobFamily,
    shape: BipartiteShape | None = None,
) -> GeneralizedProblem:
    """Fixed inconclusive-probability discrimination.

    Outcome M-1 is the inconclusive answer; the single constraint pins its
    average probability from below at ``p_i``, which is lossless for the
    corresponding equality-constrained problem.
    """
    if not 0.0 <= p_i <= 1.0:
        raise ValueError(f"inconclusive probability {p_i} outside [0, 1]")
    if len(states) < 2:
        raise ValueError("need at least two states")
    priors = _check_states_priors(states, priors)
    if shape is None:
        shape = BipartiteShape(states[0].dim // family.dim, family.dim)
    weighted = [float(xi) * s for xi, s in zip(priors, states)]
    zero = Operator(np.zeros((shape.dim, shape.dim)))
    c = tuple(weighted) + (zero,)
    total = weighted[0]
    for w in weighted[1:]:
        total = total + w
    a_row = tuple(zero for _ in weighted) + (-1.0 * total,)
    return GeneralizedProblem(shape, c, (a_row,), (-float(p_i),), family)


def shifted_objectives(p: GeneralizedProblem, lam: Sequence[float]) -> list[Operator]:
    """Objective operators shifted by the constraint multipliers,
    z_m = c_m - sum_j lam_j a_{j,m}."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (p.J,):
        raise ValueError(f"expected {p.J} multipliers, got {lam.shape}")
    if (lam < 0).any():
        raise ValueError("multipliers must be nonnegative")
    z = p.c_stack.copy()
    if p.J:
        z -= np.tensordot(lam, p.a_stack, axes=1)
    return [Operator(z[m], hermitian_tol=np.inf) for m in range(p.M)]


def contract_with_member(z_stack: np.ndarray, member: np.ndarray, shape: BipartiteShape) -> np.ndarray:
    """Alice-side contraction Tr_B sum_m z_m (1_A (x) B_m) for one member."""
    z4 = z_stack.reshape(-1, shape.dim_a, shape.dim_b, shape.dim_a, shape.dim_b)
    return np.einsum("mijkl,mlj->ik", z4, member)


def dual_constraint_operator(
    p: GeneralizedProblem, lam: Sequence[float], omega_id: int
) -> Operator:
    """Operator on H_A that a dual point must dominate at the given member."""
    if not 0 <= int(omega_id) < len(p.family):
        raise ValueError(f"unresolved family index {omega_id}")
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (p.J,):
        raise ValueError(f"expected {p.J} multipliers, got {lam.shape}")
    z = p.c_stack.copy()
    if p.J:
        z -= np.tensordot(lam, p.a_stack, axes=1)
    member = p.family.member(int(omega_id))
    return Operator(contract_with_member(z, member, p.shape), hermitian_tol=np.inf)

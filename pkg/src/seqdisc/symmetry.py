"""Finite group actions on indices and operators, symmetrization of primal
and dual candidates, and covariance checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .measurements import AliceMeasure, BobFamily
from .operators import DimensionMismatchError, Operator
from .problems import GeneralizedProblem

__all__ = [
    "SymmetryError",
    "GroupAction",
    "act",
    "validate_family_action",
    "check_problem_symmetry",
    "symmetrize_alice",
    "symmetrize_dual",
    "certify_scalar_x",
]


class SymmetryError(ValueError):
    """Group tables are inconsistent or a family is not closed under the group."""


def _apply_rep(mat: np.ndarray, anti: bool, q: np.ndarray) -> np.ndarray:
    base = q.conj() if anti else q
    return mat @ base @ mat.conj().T


def _compose_reps(rep_g, rep_h):
    """Matrix and flag of the composed (anti)unitary rep_g o rep_h."""
    mg, ag = rep_g
    mh, ah = rep_h
    mat = mg @ (mh.conj() if ag else mh)
    return mat, ag ^ ah


@dataclass(frozen=True)
class GroupAction:
    """A finite group with its actions on outcome/constraint indices, the two
    subsystems, and a Bob family's index set.

    ``compose[g][h]`` is the index of the product g h, ``rep_a`` / ``rep_b``
    give per-element (matrix, antiunitary) pairs, and ``omega_map(g, i)``
    maps family index i to the index of the transformed member.  ``perm_k``
    is only needed for minimax problems.
    """

    names: tuple[str, ...]
    compose: tuple[tuple[int, ...], ...]
    inverse: tuple[int, ...]
    perm_m: tuple[tuple[int, ...], ...]
    perm_j: tuple[tuple[int, ...], ...]
    rep_a: tuple[tuple[np.ndarray, bool], ...]
    rep_b: tuple[tuple[np.ndarray, bool], ...]
    omega_map: Callable[[int, int], int]
    perm_k: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        n = len(self.names)
        if n < 1:
            raise SymmetryError("group needs at least one element")
        table = self.compose
        if len(table) != n or any(len(row) != n for row in table):
            raise SymmetryError("composition table has the wrong shape")
        # identity: the unique e with e g = g e = g for all g
        identity = None
        for e in range(n):
            if all(table[e][g] == g and table[g][e] == g for g in range(n)):
                identity = e
                break
        if identity != 0:
            raise SymmetryError("element 0 must be the group identity")
        for g in range(n):
            if table[g][self.inverse[g]] != 0 or table[self.inverse[g]][g] != 0:
                raise SymmetryError(f"inverse table wrong at element {self.names[g]}")
        for g in range(n):
            for h in range(n):
                for k in range(n):
                    if table[table[g][h]][k] != table[g][table[h][k]]:
                        raise SymmetryError("composition table is not associative")
        for perms, size_name in ((self.perm_m, "perm_m"), (self.perm_j, "perm_j")):
            for g, perm in enumerate(perms):
                if sorted(perm) != list(range(len(perm))):
                    raise SymmetryError(f"{size_name}[{self.names[g]}] is not a permutation")
        if self.perm_k is not None:
            for g, perm in enumerate(self.perm_k):
                if sorted(perm) != list(range(len(perm))):
                    raise SymmetryError(f"perm_k[{self.names[g]}] is not a permutation")
        # identity element acts trivially everywhere
        if self.perm_m[0] != tuple(range(len(self.perm_m[0]))):
            raise SymmetryError("identity must fix every outcome index")
        if self.perm_j[0] != tuple(range(len(self.perm_j[0]))):
            raise SymmetryError("identity must fix every constraint index")
        for rep, label in ((self.rep_a, "rep_a"), (self.rep_b, "rep_b")):
            mat0, anti0 = rep[0]
            d = mat0.shape[0]
            if anti0 or np.abs(mat0 - np.eye(d)).max() > 1e-10:
                raise SymmetryError(f"{label} of the identity must be the identity matrix")
            for g, (mat, anti) in enumerate(rep):
                if mat.shape != (d, d):
                    raise SymmetryError(f"{label}[{self.names[g]}] has the wrong shape")
                if np.abs(mat.conj().T @ mat - np.eye(d)).max() > 1e-8:
                    raise SymmetryError(f"{label}[{self.names[g]}] is not unitary")
            # representation property up to a global phase
            for g in range(n):
                for h in range(n):
                    mat, anti = _compose_reps(rep[g], rep[h])
                    target_mat, target_anti = rep[table[g][h]]
                    if anti != target_anti:
                        raise SymmetryError(f"{label} antiunitary flags are inconsistent")
                    overlap = abs(np.trace(target_mat.conj().T @ mat))
                    if abs(overlap - d) > 1e-8 * d:
                        raise SymmetryError(
                            f"{label} is not a projective representation at "
                            f"({self.names[g]}, {self.names[h]})"
                        )

    def __len__(self) -> int:
        return len(self.names)

    def index(self, g) -> int:
        if isinstance(g, str):
            return self.names.index(g)
        return int(g)


def act(gr: GroupAction, g, q: Operator, which: str = "joint") -> Operator:
    """Apply a group element to an operator on A, B, or the joint space."""
    gi = gr.index(g)
    mat_a, anti_a = gr.rep_a[gi]
    mat_b, anti_b = gr.rep_b[gi]
    if which == "A":
        mat, anti = mat_a, anti_a
    elif which == "B":
        mat, anti = mat_b, anti_b
    elif which == "joint":
        if anti_a != anti_b:
            raise SymmetryError("joint action needs matching antiunitary flags")
        mat, anti = np.kron(mat_a, mat_b), anti_a
    else:
        raise ValueError(f"unknown subsystem {which!r}")
    if mat.shape[0] != q.dim:
        raise DimensionMismatchError("operator does not live on the requested subsystem")
    return Operator(_apply_rep(mat, anti, q.mat), hermitian_tol=np.inf)


def validate_family_action(
    gr: GroupAction,
    family: BobFamily,
    indices: Sequence[int] | None = None,
    tol: float = 1e-8,
) -> None:
    """Check g o B_m^(omega) = B_{g o m}^(g o omega) on sampled members."""
    if indices is None:
        count = len(family)
        indices = np.unique(np.linspace(0, count - 1, min(count, 12)).astype(int))
    for g in range(len(gr)):
        mat_b, anti_b = gr.rep_b[g]
        perm = gr.perm_m[g]
        for i in indices:
            i = int(i)
            target = gr.omega_map(g, i)
            if not 0 <= target < len(family):
                raise SymmetryError("family not closed under group")
            src = family.member(i)
            dst = family.member(target)
            for m in range(family.outcomes):
                moved = _apply_rep(mat_b, anti_b, src[m])
                if np.abs(moved - dst[perm[m]]).max() > tol:
                    raise SymmetryError(
                        f"family action mismatch at element {gr.names[g]}, "
                        f"member {i}, outcome {m}"
                    )


def check_problem_symmetry(gr: GroupAction, p: GeneralizedProblem, tol: float = 1e-8) -> bool:
    """True iff the problem data is invariant under the group action."""
    if len(gr.perm_m[0]) != p.M or len(gr.perm_j[0]) != p.J:
        raise SymmetryError("index permutations are not sized to the problem")
    for g in range(len(gr)):
        pm, pj = gr.perm_m[g], gr.perm_j[g]
        for m in range(p.M):
            moved = act(gr, g, p.c[m], "joint")
            if np.abs(moved.mat - p.c[pm[m]].mat).max() > tol:
                return False
        for j in range(p.J):
            if abs(p.b[j] - p.b[pj[j]]) > tol:
                return False
            for m in range(p.M):
                moved = act(gr, g, p.a[j][m], "joint")
                if np.abs(moved.mat - p.a[pj[j]][pm[m]].mat).max() > tol:
                    return False
    return True


def transform_member(gr: GroupAction, g: int, arr: np.ndarray) -> np.ndarray:
    """POVM of the transformed index: element m is the g-moved element that
    the inverse outcome permutation assigns to m."""
    mat, anti = gr.rep_b[g]
    pinv = gr.perm_m[gr.inverse[g]]
    return np.stack([_apply_rep(mat, anti, arr[pinv[m]]) for m in range(arr.shape[0])])


def symmetrize_alice(
    gr: GroupAction, phi: AliceMeasure, family: BobFamily | None = None
) -> AliceMeasure:
    """Group average of an Alice measure.

    The averaged measure is covariant (applying g to a weight matches moving
    its index by g) and has the same objective value on any group-symmetric
    problem.  ``family``, when given, is the family the group action indexes;
    support members beyond it (refined off-grid members appended by the
    solver) are moved explicitly and their orbit is appended to the result's
    family.
    """
    fam_meas = phi.family if phi.family is not None else family
    fam_act = family if family is not None else phi.family
    if fam_meas is None or fam_act is None:
        raise ValueError("a Bob family is required to move support indices")
    n_act = len(fam_act)
    in_domain = [i for i, _ in phi.support if i < n_act]
    if in_domain:
        validate_family_action(gr, fam_act, indices=in_domain)
    n = len(gr)
    accum: dict[tuple, np.ndarray] = {}
    extra_arrays: list[np.ndarray] = []

    def locate_extra(arr: np.ndarray) -> int:
        for k, seen in enumerate(extra_arrays):
            if np.abs(arr - seen).max() < 1e-10:
                return k
        extra_arrays.append(arr)
        return len(extra_arrays) - 1

    for g in range(n):
        ginv = gr.inverse[g]
        mat, anti = gr.rep_a[ginv]
        for idx, w in phi.support:
            if idx < n_act:
                key = ("idx", gr.omega_map(ginv, idx))
            else:
                moved_member = transform_member(gr, ginv, fam_meas.member(idx))
                key = ("extra", locate_extra(moved_member))
            moved = _apply_rep(mat, anti, w.mat)
            if key in accum:
                accum[key] = accum[key] + moved
            else:
                accum[key] = moved
    out_family = fam_act
    if extra_arrays:
        out_family = fam_act.with_members(extra_arrays)
    support = []
    for key in sorted(accum, key=lambda k: (k[0] != "idx", k[1])):
        index = key[1] if key[0] == "idx" else n_act + key[1]
        support.append((index, Operator(accum[key] / n, hermitian_tol=np.inf)))
    return AliceMeasure(support, family=out_family)


def symmetrize_dual(gr: GroupAction, y) -> "DualPoint":
    """Group average of a dual candidate; preserves the dual objective and
    never shrinks the feasibility margin."""
    from .dual import DualPoint  # local import to avoid a cycle

    n = len(gr)
    x = np.zeros_like(y.x.mat)
    for g in range(n):
        mat, anti = gr.rep_a[g]
        x += _apply_rep(mat, anti, y.x.mat)
    lam_in = np.asarray(y.lam, dtype=float)
    lam = np.zeros_like(lam_in)
    for g in range(n):
        ginv = gr.inverse[g]
        for j in range(lam_in.size):
            lam[j] += lam_in[gr.perm_j[ginv][j]]
    return DualPoint(Operator(x / n, hermitian_tol=np.inf), tuple(lam / n))


def _hermitian_basis(d: int) -> list[np.ndarray]:
    basis = []
    for i in range(d):
        e = np.zeros((d, d), complex)
        e[i, i] = 1.0
        basis.append(e)
    for i in range(d):
        for j in range(i + 1, d):
            e = np.zeros((d, d), complex)
            e[i, j] = e[j, i] = 1.0 / np.sqrt(2)
            basis.append(e)
            e = np.zeros((d, d), complex)
            e[i, j] = -1j / np.sqrt(2)
            e[j, i] = 1j / np.sqrt(2)
            basis.append(e)
    return basis


def certify_scalar_x(gr: GroupAction) -> bool:
    """True iff only multiples of the identity commute with the A-side action,
    which licenses the scalar fast path of the dual solver."""
    d = gr.rep_a[0][0].shape[0]
    basis = _hermitian_basis(d)
    rows = []
    for g in range(len(gr)):
        mat, anti = gr.rep_a[g]
        moved = np.array(
            [_coords(_apply_rep(mat, anti, h), basis) for h in basis]
        ).T  # columns: image coordinates of each basis element
        rows.append(moved - np.eye(d * d))
    stacked = np.vstack(rows)
    svals = np.linalg.svd(stacked, compute_uv=False)
    null_dim = int((svals < 1e-8 * max(1.0, svals.max())).sum()) + (d * d - len(svals))
    return null_dim == 1


def _coords(h: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    return np.array([np.tensordot(b.conj(), h, axes=2).real for b in basis])

"""Closed forms for the double-trine instance: states, optimal dual pair,
optimal measurement, the template Bob family, the spectral analysis of the
dual constraint operators, and the canonical symmetry group.

The double trine is the ensemble of the three product states built from the
qubit vectors at angles 2 pi m / 3, with equal priors.
"""

from __future__ import annotations

import numpy as np

from .measurements import (
    AliceMeasure,
    BobFamily,
    ExplicitBobFamily,
    Povm,
    QubitRotationGridFamily,
    SequentialMeasurement,
    assemble_sequential,
)
from .minimax import MinimaxProblem
from .operators import BipartiteShape, Operator, projector
from .problems import GeneralizedProblem, build_inconclusive
from .symmetry import GroupAction, SymmetryError, validate_family_action

__all__ = [
    "trine_vectors",
    "trine_states",
    "rotation",
    "TRINE_ROTATION",
    "success_probability",
    "dual_solution",
    "bob_template",
    "template_alpha",
    "optimal_measurement",
    "top_eigenvalue_closed_form",
    "eigenbasis_angle",
    "peak_success_closed_form",
    "max_sigma_eigenvalue",
    "grid_family",
    "inconclusive_problem",
    "minimax_problem",
    "trine_group",
]

_ANGLES = 2.0 * np.pi * np.arange(3) / 3.0
_BREAKPOINT = 0.5 + 0.5 / np.sqrt(3.0)


def trine_vectors() -> tuple[np.ndarray, np.ndarray]:
    """The three qubit vectors at 120 degree spacing and their orthogonals."""
    phi = np.stack([np.cos(_ANGLES), np.sin(_ANGLES)], axis=1)
    perp = np.stack([-np.sin(_ANGLES), np.cos(_ANGLES)], axis=1)
    return phi, perp


def trine_states() -> tuple[list[Operator], np.ndarray, np.ndarray]:
    """Equal-prior double-trine states (1/3)|phi_m phi_m><phi_m phi_m| plus
    the local vectors."""
    phi, perp = trine_vectors()
    states = []
    for m in range(3):
        psi = np.kron(phi[m], phi[m])
        states.append((1.0 / 3.0) * projector(psi))
    return states, phi, perp


def rotation(theta: float) -> np.ndarray:
    """Real rotation of the qubit plane by theta."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


TRINE_ROTATION = rotation(2.0 * np.pi / 3.0)


def _check_pi(p_i: float) -> float:
    p_i = float(p_i)
    if not 0.0 <= p_i <= 0.5:
        raise ValueError(f"inconclusive probability {p_i} outside [0, 1/2]")
    return p_i


def success_probability(p_i: float) -> float:
    """Optimal sequential success probability at fixed inconclusive
    probability; monotone decreasing on [0, 1/2]."""
    p_i = _check_pi(p_i)
    return 0.5 * (1.0 - p_i) + 0.25 * np.sqrt(3.0 - 4.0 * p_i)


def dual_solution(p_i: float) -> tuple[float, float, Operator]:
    """Optimal multiplier, the trace of the optimal dual operator, and the
    operator itself (a multiple of the identity by symmetry)."""
    p_i = _check_pi(p_i)
    root = np.sqrt(3.0 - 4.0 * p_i)
    lam = 0.5 + 0.5 / root
    trace_x = 0.5 + (3.0 - 2.0 * p_i) / (4.0 * root)
    return float(lam), float(trace_x), Operator((trace_x / 2.0) * np.eye(2))


def bob_template(alpha: float) -> Povm:
    """Four-outcome qubit template: a dropped outcome, two rank-one elements
    symmetric about |0>, and a failure element alpha |1><1|."""
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"failure weight {alpha} outside [0, 1]")
    return Povm(QubitRotationGridFamily.build([0.0], [alpha], [0])[0])


def template_alpha(lam: float) -> float:
    """Failure weight that makes the template optimal at a given multiplier;
    zero at and below the breakpoint multiplier."""
    lam = float(lam)
    if not _BREAKPOINT - 1e-12 <= lam <= 1.0 + 1e-12:
        raise ValueError(f"multiplier {lam} outside [{_BREAKPOINT:.6f}, 1]")
    return 2.0 * (6.0 * lam * lam - 6.0 * lam + 1.0) / (3.0 * (2.0 * lam - 1.0) ** 2)


def optimal_measurement(
    p_i: float,
) -> tuple[AliceMeasure, ExplicitBobFamily, SequentialMeasurement]:
    """Closed-form optimal sequential measurement: three Alice outcomes with
    weights (2/3)|perp_k><perp_k|, each steering Bob to a rotated, relabeled
    copy of the template."""
    p_i = _check_pi(p_i)
    alpha = 4.0 * p_i / 3.0
    thetas = _ANGLES
    members = QubitRotationGridFamily.build(thetas, [alpha] * 3, [0, 1, 2])
    family = ExplicitBobFamily(
        [Povm(members[k]) for k in range(3)],
        labels=[f"trine(k={k})" for k in range(3)],
    )
    _, perp = trine_vectors()
    support = [(k, (2.0 / 3.0) * projector(perp[k])) for k in range(3)]
    alice = AliceMeasure(support, family=family)
    joint = assemble_sequential(alice, family)
    return alice, family, joint


def top_eigenvalue_closed_form(theta: float, lam: float, bob: Povm) -> float:
    """Largest eigenvalue of the dual constraint operator of a four-outcome
    qubit member, given the rotation angle theta of its eigenbasis.

    The operator is sum_m l_m |phi_m><phi_m| with
    l_m = (1/3) <phi_m| B_m + lam B_3 |phi_m>, and its top eigenvector is the
    theta-rotated |1>, so the eigenvalue is sum_m sin^2(theta - 2 pi m / 3) l_m.
    """
    if len(bob) != 4 or bob.dim != 2:
        raise ValueError("expected a four-outcome qubit POVM")
    phi, _ = trine_vectors()
    arr = bob.array
    total = 0.0
    for m in range(3):
        l_m = float(
            (phi[m].conj() @ (arr[m] + lam * arr[3]) @ phi[m]).real
        ) / 3.0
        total += np.sin(theta - _ANGLES[m]) ** 2 * l_m
    return float(total)


def eigenbasis_angle(q: Operator) -> float:
    """Rotation angle theta whose rotated |1> is the top eigenvector of a
    real-spanned qubit operator."""
    vals, vecs = np.linalg.eigh(q.mat)
    top = vecs[:, -1]
    pivot = top[np.argmax(np.abs(top))]
    top = (top * pivot.conj() / abs(pivot)).real
    return float(np.arctan2(-top[0], top[1]) % (2.0 * np.pi))


def peak_success_closed_form(lam: float) -> float:
    """Peak success probability of the aligned four-state ensemble appearing
    in the spectral analysis, as a piecewise closed form on 0 <= lam <= 1."""
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"multiplier {lam} outside [0, 1]")
    if lam <= _BREAKPOINT:
        return (2.0 + np.sqrt(3.0)) / (4.0 * (lam + 1.0))
    return lam * (3.0 * lam - 1.0) / (2.0 * (lam + 1.0) * (2.0 * lam - 1.0))


def max_sigma_eigenvalue(lam: float) -> float:
    """Largest dual-constraint eigenvalue over all Bob measurements at a
    given multiplier: (lam + 1)/2 times the peak success probability."""
    return 0.5 * (float(lam) + 1.0) * peak_success_closed_form(lam)


def grid_family(
    theta_steps: int = 360,
    alpha_steps: int = 34,
    alpha_range: tuple[float, float] = (0.0, 1.0),
) -> QubitRotationGridFamily:
    """Default rotated-template grid; theta_steps should be divisible by 3 so
    the grid is closed under the trine rotation."""
    return QubitRotationGridFamily(theta_steps, alpha_steps, alpha_range)


def inconclusive_problem(
    p_i: float,
    family: BobFamily | None = None,
    theta_steps: int = 360,
    alpha_steps: int = 34,
) -> GeneralizedProblem:
    """Fixed-inconclusive-probability discrimination of the double trine."""
    p_i = _check_pi(p_i)
    states, _, _ = trine_states()
    normalized = [3.0 * s for s in states]
    fam = family if family is not None else grid_family(theta_steps, alpha_steps)
    return build_inconclusive(
        normalized, [1.0 / 3.0] * 3, p_i, fam, shape=BipartiteShape(2, 2)
    )


def minimax_problem(
    family: BobFamily | None = None,
    theta_steps: int = 120,
    alpha_steps: int = 12,
) -> MinimaxProblem:
    """Per-state success functionals f_k = Tr[rho~_k Pi_k] of the double
    trine over a four-outcome family (the fourth outcome earns nothing)."""
    states, _, _ = trine_states()
    fam = family if family is not None else grid_family(theta_steps, alpha_steps)
    zero = Operator(np.zeros((4, 4)))
    rows = []
    for k in range(3):
        row = [zero] * fam.outcomes
        row[k] = 3.0 * states[k]
        rows.append(tuple(row))
    return MinimaxProblem(
        shape=BipartiteShape(2, 2),
        c=tuple(rows),
        d=(0.0,) * 3,
        family=fam,
    )


def trine_group(
    family: BobFamily,
    m_outcomes: int = 4,
    j_constraints: int = 1,
    with_k: bool = False,
) -> GroupAction:
    """Order-six symmetry of the trine problems: rotations by 120 degrees and
    complex conjugation, acting identically on both subsystems.

    Supports the rotated-template grid (theta steps divisible by 3) and
    three-member explicit families listed in rotation order.
    """
    names = ("e", "r", "rr", "c", "rc", "rrc")

    def key(k, l):
        return k + 3 * l

    compose = [[0] * 6 for _ in range(6)]
    inverse = [0] * 6
    for k1 in range(3):
        for l1 in range(2):
            for k2 in range(3):
                for l2 in range(2):
                    compose[key(k1, l1)][key(k2, l2)] = key((k1 + k2) % 3, l1 ^ l2)
            inverse[key(k1, l1)] = key((-k1) % 3, l1)
    reps = []
    for l in range(2):
        for k in range(3):
            reps.append((np.linalg.matrix_power(TRINE_ROTATION, k).astype(complex), bool(l)))

    if m_outcomes == 4:
        perm_m = tuple(
            tuple([(m + k) % 3 for m in range(3)] + [3]) for l in range(2) for k in range(3)
        )
    elif m_outcomes == 3:
        perm_m = tuple(
            tuple((m + k) % 3 for m in range(3)) for l in range(2) for k in range(3)
        )
    else:
        raise SymmetryError("trine group supports 3 or 4 outcomes")
    perm_j = tuple(tuple(range(j_constraints)) for _ in range(6))
    perm_k = (
        tuple(tuple((m + k) % 3 for m in range(3)) for l in range(2) for k in range(3))
        if with_k
        else None
    )

    if isinstance(family, QubitRotationGridFamily):
        if family.theta_steps % 3 != 0 or family.shifts != 3:
            raise SymmetryError(
                "grid family must have theta steps divisible by 3 and all shifts"
            )
        per_shift = family.theta_steps * family.alpha_steps
        third = family.theta_steps // 3

        def omega_map(g: int, i: int) -> int:
            k = g % 3
            c, rem = divmod(i, per_shift)
            it, ia = divmod(rem, family.alpha_steps)
            it = (it + k * third) % family.theta_steps
            c = (c + k) % 3
            return c * per_shift + it * family.alpha_steps + ia

    elif len(family) == 3:

        def omega_map(g: int, i: int) -> int:
            return (i + g % 3) % 3

    else:
        raise SymmetryError("no canonical trine action for this family")

    group = GroupAction(
        names=names,
        compose=tuple(tuple(row) for row in compose),
        inverse=tuple(inverse),
        perm_m=perm_m,
        perm_j=perm_j,
        rep_a=tuple(reps),
        rep_b=tuple(reps),
        omega_map=omega_map,
        perm_k=perm_k,
    )
    validate_family_action(group, family)
    return group

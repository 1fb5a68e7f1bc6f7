"""Optimality certificates for candidate solutions, independent of how the
candidates were produced.

Three equivalent views are checked: kernel alignment of the dual slack with
the Alice weights plus multiplier slackness, dominance of the reconstructed
dual operator over the whole family, and a vanishing duality gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dual import DualPoint, _DualScan, _min_eigs
from .measurements import AliceMeasure
from .operators import Operator
from .problems import GeneralizedProblem, constraint_values

__all__ = [
    "InfeasibleCandidateError",
    "CertificateReport",
    "check_condition_2",
    "check_condition_3",
    "duality_gap",
    "check_outcome_bound",
    "certify",
]


class InfeasibleCandidateError(ValueError):
    """A candidate handed to the gap computation is not feasible."""


@dataclass
class CertificateReport:
    """Residuals and verdicts; fields not produced by a given check are None.

    ``cond14_residual``: worst kernel-alignment residual over the support.
    ``cond15_residual``: worst multiplier slackness residual.
    ``cond16_margin``: dominance margin of the reconstructed dual operator.
    ``anti_hermitian_residual``: reported separately, never gates a verdict.
    """

    tol: float
    cond14_residual: float | None = None
    cond15_residual: float | None = None
    cond16_margin: float | None = None
    anti_hermitian_residual: float | None = None
    dual_margin: float | None = None
    primal_feasible: bool | None = None
    gap: float | None = None
    condition2: bool | None = None
    condition3: bool | None = None
    optimal: bool | None = None


def _scale(p: GeneralizedProblem) -> float:
    return max(1.0, max((op.norm() for op in p.c), default=0.0))


def _family_for(p: GeneralizedProblem, a: AliceMeasure):
    return a.family if a.family is not None else p.family


def _support_sigmas(p, a, lam):
    """Per-support contracted operators (resolved via the candidate's own
    family) and the smallest-eigenvalue margin function over the problem's
    family plus the support members."""
    from seqdisc.problems import contract_with_member

    fam = _family_for(p, a)
    lam = np.asarray(lam, dtype=float)
    z = p.c_stack.copy()
    if p.J:
        z -= np.tensordot(lam, p.a_stack, axes=1)
    support_sigma = [
        contract_with_member(z, fam.member(idx), p.shape) for idx in a.ids
    ]
    scan = _DualScan(p)
    grid_sigma = scan.sigma(lam)

    def margin_of(x_mat: np.ndarray) -> float:
        margins = _min_eigs(x_mat[None] - grid_sigma)
        worst = float(margins.min())
        for sig in support_sigma:
            worst = min(worst, float(np.linalg.eigvalsh(x_mat - sig)[0]))
        return worst

    return support_sigma, margin_of


def _primal_feasible(p, a, tol) -> bool:
    eta = constraint_values(p, a)
    return bool((eta <= tol).all()) if eta.size else True


def check_condition_2(
    p: GeneralizedProblem, a: AliceMeasure, d: DualPoint, tol: float = 1e-7
) -> CertificateReport:
    """Kernel alignment (X - sigma_omega) A_omega = 0 on the support plus
    multiplier slackness, together with dual feasibility over the family."""
    tol_eff = tol * _scale(p)
    lam = np.asarray(d.lam, dtype=float)
    support_sigma, margin_of = _support_sigmas(p, a, lam)
    res14 = 0.0
    for (i, w), sig in zip(a.support, support_sigma):
        slack = d.x.mat - sig
        res14 = max(res14, float(np.linalg.norm(slack @ w.mat)))
    eta = constraint_values(p, a)
    res15 = float(np.abs(lam * eta).max()) if p.J else 0.0
    dual_margin = margin_of(d.x.mat)
    report = CertificateReport(
        tol=tol_eff,
        cond14_residual=res14,
        cond15_residual=res15,
        dual_margin=dual_margin,
        primal_feasible=_primal_feasible(p, a, tol_eff),
    )
    report.condition2 = bool(
        res14 <= tol_eff
        and res15 <= tol_eff
        and dual_margin >= -tol_eff
        and report.primal_feasible
    )
    return report


def check_condition_3(
    p: GeneralizedProblem, a: AliceMeasure, lam, tol: float = 1e-7
) -> CertificateReport:
    """Dominance of the reconstructed operator sum_k sigma_omega_k A_k over
    the family, with the anti-Hermitian residual reported separately."""
    tol_eff = tol * _scale(p)
    lam = np.asarray(lam, dtype=float)
    if (lam < 0).any():
        raise ValueError("multipliers must be nonnegative")
    support_sigma, margin_of = _support_sigmas(p, a, lam)
    da = p.shape.dim_a
    x_rec = np.zeros((da, da), complex)
    for (i, w), sig in zip(a.support, support_sigma):
        x_rec += sig @ w.mat
    anti = float(np.linalg.norm(x_rec - x_rec.conj().T)) / 2.0
    x_sym = (x_rec + x_rec.conj().T) / 2.0
    margin16 = margin_of(x_sym)
    eta = constraint_values(p, a)
    res17 = float(np.abs(lam * eta).max()) if p.J else 0.0
    report = CertificateReport(
        tol=tol_eff,
        cond15_residual=res17,
        cond16_margin=margin16,
        anti_hermitian_residual=anti,
        primal_feasible=_primal_feasible(p, a, tol_eff),
    )
    report.condition3 = bool(
        margin16 >= -tol_eff and res17 <= tol_eff and report.primal_feasible
    )
    return report


def duality_gap(
    p: GeneralizedProblem, a: AliceMeasure, d: DualPoint, tol: float = 1e-7
) -> float:
    """Gap between a feasible dual candidate and a feasible primal candidate;
    raises when either side is infeasible."""
    from .problems import objective

    tol_eff = tol * _scale(p)
    if not _primal_feasible(p, a, tol_eff):
        raise InfeasibleCandidateError("primal candidate violates a constraint")
    lam = np.asarray(d.lam, dtype=float)
    support_sigma, margin_of = _support_sigmas(p, a, lam)
    margin = margin_of(d.x.mat)
    if margin < -tol_eff:
        raise InfeasibleCandidateError(
            f"dual candidate infeasible (margin {margin:.3e})"
        )
    from .dual import dual_objective

    return dual_objective(p, d) - objective(p, a)


def check_outcome_bound(a: AliceMeasure, p: GeneralizedProblem) -> bool:
    """True iff the support size respects the (J+1) d_A^2 outcome bound."""
    return len(a.support) <= (p.J + 1) * p.shape.dim_a**2


def certify(
    p: GeneralizedProblem, a: AliceMeasure, d: DualPoint, tol: float = 1e-7
) -> CertificateReport:
    """All conditions at once; the optimality verdict requires primal
    feasibility plus either equivalent condition."""
    r2 = check_condition_2(p, a, d, tol)
    r3 = check_condition_3(p, a, d.lam, tol)
    report = CertificateReport(
        tol=r2.tol,
        cond14_residual=r2.cond14_residual,
        cond15_residual=r2.cond15_residual,
        cond16_margin=r3.cond16_margin,
        anti_hermitian_residual=r3.anti_hermitian_residual,
        dual_margin=r2.dual_margin,
        primal_feasible=r2.primal_feasible,
        condition2=r2.condition2,
        condition3=r3.condition3,
    )
    try:
        report.gap = duality_gap(p, a, d, tol)
    except InfeasibleCandidateError:
        report.gap = None
    report.optimal = bool(report.primal_feasible and (report.condition2 or report.condition3))
    return report

"""Dual solvers for the sequential and global discrimination problems.

The semi-infinite dual is solved by an exchange loop: keep a finite active
set of Bob members, solve the finite-constraint subproblem, add the worst
violator from the full family (optionally polished along the family's
continuous parameters), and repeat.  The finite subproblem is itself solved
by eigenvector cutting planes over an LP, which is deterministic and exact
enough at the tiny dimensions this library targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog, nnls

from .measurements import AliceMeasure, BobFamily
from .operators import BipartiteShape, Operator
from .problems import (
    EQUALITY,
    GeneralizedProblem,
    contract_with_member,
)

__all__ = [
    "SolveError",
    "NonconvergenceError",
    "PrimalInfeasibleError",
    "ExtractionError",
    "SolverConfig",
    "DualPoint",
    "SolveReport",
    "dual_objective",
    "feasibility_margin",
    "solve_dual",
    "solve_dual_scalar_x",
    "extract_primal",
    "solve_global_dual",
]


class SolveError(RuntimeError):
    """Base class for solver failures."""


class NonconvergenceError(SolveError):
    """The solver hit its iteration budget or missed the gap tolerance."""


class PrimalInfeasibleError(SolveError):
    """Dual objective decreases without bound: the primal has no feasible point."""


class ExtractionError(SolveError):
    """Kernel-based primal extraction failed; refine the family grid."""


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and controls shared by the dual solvers.

    ``penalty_growth`` is the expansion factor applied to the trust-region
    box whenever the subproblem solution hits it; ``infeasible_floor`` (auto
    when None) is the dual objective below which the primal is declared
    infeasible.
    """

    eps_feas: float = 1e-7
    eps_gap: float = 1e-4
    max_iters: int = 300
    penalty_growth: float = 8.0
    scalar_x_fast_path: bool = False
    refine_local: bool = True
    seed: int = 0
    kernel_tol: float = 1e-6
    chunk: int = 16384
    infeasible_floor: float | None = None


@dataclass(frozen=True)
class DualPoint:
    """Candidate dual point: Hermitian operator on H_A and nonnegative
    multipliers.  Feasibility is checked, never assumed."""

    x: Operator
    lam: tuple[float, ...] = ()

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lam)
        if any(v < 0 for v in lam):
            raise ValueError(f"multipliers must be nonnegative, got {lam}")
        object.__setattr__(self, "lam", lam)


@dataclass
class SolveReport:
    """Solution summary; ``weak_duality_pairs`` records every (dual value,
    extracted primal value) pair produced along the run."""

    dual_value: float
    primal_value: float | None
    gap: float | None
    active_omegas: tuple[int, ...]
    iterations: int
    feasibility_margin: float
    status: str = "converged"
    weak_duality_pairs: tuple[tuple[float, float], ...] = ()
    restricted_values: tuple[float, ...] = ()
    alice: AliceMeasure | None = None
    family: BobFamily | None = None

    def __post_init__(self):
        if self.gap is not None and self.gap < -1e-9:
            raise SolveError(f"weak duality violated: gap {self.gap:.3e}")


def dual_objective(p: GeneralizedProblem, d: DualPoint) -> float:
    """Tr X plus the multiplier-weighted constraint levels."""
    lam = np.asarray(d.lam, dtype=float)
    if lam.shape != (p.J,):
        raise ValueError(f"expected {p.J} multipliers, got {lam.shape}")
    return d.x.trace() + float(lam @ np.asarray(p.b)) if p.J else d.x.trace()


# ---------------------------------------------------------------------------
# batched spectral helpers


def _min_eigs(mats: np.ndarray) -> np.ndarray:
    if mats.shape[-1] == 2:
        a = mats[..., 0, 0].real
        d = mats[..., 1, 1].real
        off = np.abs(mats[..., 0, 1])
        mid = 0.5 * (a + d)
        rad = np.sqrt(np.maximum(0.25 * (a - d) ** 2 + off**2, 0.0))
        return mid - rad
    return np.linalg.eigvalsh(mats)[..., 0]


def _max_eigs(mats: np.ndarray) -> np.ndarray:
    if mats.shape[-1] == 2:
        a = mats[..., 0, 0].real
        d = mats[..., 1, 1].real
        off = np.abs(mats[..., 0, 1])
        mid = 0.5 * (a + d)
        rad = np.sqrt(np.maximum(0.25 * (a - d) ** 2 + off**2, 0.0))
        return mid + rad
    return np.linalg.eigvalsh(mats)[..., -1]


def _rvec(h: np.ndarray) -> np.ndarray:
    """Frobenius-isometric real embedding of a Hermitian matrix."""
    d = h.shape[0]
    iu = np.triu_indices(d, 1)
    return np.concatenate(
        [h.diagonal().real, np.sqrt(2.0) * h[iu].real, np.sqrt(2.0) * h[iu].imag]
    )


def _rmat(x: np.ndarray, d: int) -> np.ndarray:
    h = np.zeros((d, d), complex)
    h[np.diag_indices(d)] = x[:d]
    iu = np.triu_indices(d, 1)
    k = iu[0].size
    off = (x[d : d + k] + 1j * x[d + k :]) / np.sqrt(2.0)
    h[iu] = off
    h[(iu[1], iu[0])] = off.conj()
    return h


# ---------------------------------------------------------------------------
# contracted per-member data


class _DualScan:
    """Per-member Alice-side contractions of the objective and constraint
    operators over a whole family, so spectra at any multipliers are cheap."""

    def __init__(self, p: GeneralizedProblem, family: BobFamily | None = None, chunk: int = 16384):
        fam = family if family is not None else p.family
        if fam is None or len(fam) == 0:
            raise ValueError("a nonempty Bob family is required")
        self.family = fam
        self.shape = p.shape
        da = p.shape.dim_a
        n = len(fam)
        self.sc = np.empty((n, da, da), complex)
        self.sa = np.empty((p.J, n, da, da), complex)
        c4 = p.c_stack.reshape(p.M, da, p.shape.dim_b, da, p.shape.dim_b)
        a4 = p.a_stack.reshape(p.J, p.M, da, p.shape.dim_b, da, p.shape.dim_b)
        for start, block in fam.blocks(chunk):
            stop = start + block.shape[0]
            self.sc[start:stop] = np.einsum("mijkl,nmlj->nik", c4, block)
            for j in range(p.J):
                self.sa[j, start:stop] = np.einsum("mijkl,nmlj->nik", a4[j], block)

    def __len__(self) -> int:
        return self.sc.shape[0]

    def sigma(self, lam: np.ndarray) -> np.ndarray:
        if not lam.size:
            return self.sc
        out = self.sc.copy()
        for j in range(lam.size):
            if lam[j]:
                out -= lam[j] * self.sa[j]
        return out

    def member_data(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.sc[i], self.sa[:, i]

    def margins(self, x_mat: np.ndarray, lam: np.ndarray) -> np.ndarray:
        return _min_eigs(x_mat[None] - self.sigma(lam))

    def top_eigs(self, lam: np.ndarray) -> np.ndarray:
        return _max_eigs(self.sigma(lam))


@dataclass
class _Member:
    """One active constraint of the exchange loop."""

    sc: np.ndarray
    sa: np.ndarray  # (J, da, da)
    label: str
    grid_index: int | None = None
    member_array: np.ndarray | None = None  # (M, db, db), for polished members
    source_index: int | None = None  # grid parent of a polished member

    def sigma(self, lam: np.ndarray) -> np.ndarray:
        if not lam.size:
            return self.sc
        out = self.sc.copy()
        for j in range(lam.size):
            if lam[j]:
                out -= lam[j] * self.sa[j]
        return out


def _member_from_array(p: GeneralizedProblem, arr: np.ndarray, label: str) -> _Member:
    z4 = p.c_stack
    sc = contract_with_member(z4, arr, p.shape)
    sa = np.stack(
        [contract_with_member(p.a_stack[j], arr, p.shape) for j in range(p.J)]
    ) if p.J else np.zeros((0, p.shape.dim_a, p.shape.dim_a), complex)
    return _Member(sc, sa, label, grid_index=None, member_array=np.asarray(arr))


# ---------------------------------------------------------------------------
# finite subproblem: eigenvector cutting planes over an LP


class _RestrictedDual:
    """Minimize Tr X + lam . b subject to X >= sigma_i(lam) for the active
    members, via supporting-hyperplane cuts v^dag (X - sigma_i(lam)) v >= 0."""

    def __init__(
        self,
        da: int,
        b: np.ndarray,
        cfg: SolverConfig,
        scale: float,
        real_only: bool = False,
    ):
        self.da = da
        self.b = np.asarray(b, dtype=float)
        self.nj = self.b.size
        self.nx = da * da
        self.cfg = cfg
        self.obj = np.concatenate([_rvec(np.eye(da)), self.b])
        self.rows: list[np.ndarray] = []
        self.rhs: list[float] = []
        self.box = 8.0 * max(1.0, scale)
        self.lam_cap = 1e3 * max(1.0, scale)
        floor = cfg.infeasible_floor
        self.floor = floor if floor is not None else -1e5 * max(1.0, scale)
        self.inner_tol = min(1e-9, cfg.eps_feas / 10.0)
        # with all-real problem data the optimum can be taken real symmetric;
        # pinning the imaginary coordinates keeps the LP vertex from
        # wandering along directions the objective cannot see
        self.real_only = real_only

    def add_cut(self, v: np.ndarray, sc_v: float, sa_v: np.ndarray) -> None:
        row = np.concatenate([-_rvec(np.outer(v, v.conj())), -sa_v])
        self.rows.append(row)
        self.rhs.append(-sc_v)

    def cut_for(self, member: _Member, v: np.ndarray) -> None:
        sc_v = float((v.conj() @ member.sc @ v).real)
        sa_v = np.array(
            [float((v.conj() @ member.sa[j] @ v).real) for j in range(self.nj)]
        )
        self.add_cut(v, sc_v, sa_v)

    def _lp(self):
        bounds = [(-self.box, self.box)] * self.nx + [(0.0, self.lam_cap)] * self.nj
        if self.real_only:
            n_off = (self.da * (self.da - 1)) // 2
            for k in range(self.da + n_off, self.nx):
                bounds[k] = (0.0, 0.0)
        res = linprog(
            self.obj,
            A_ub=np.asarray(self.rows),
            b_ub=np.asarray(self.rhs),
            bounds=bounds,
            method="highs",
            options={
                "primal_feasibility_tolerance": 1e-10,
                "dual_feasibility_tolerance": 1e-10,
            },
        )
        if not res.success:
            raise SolveError(f"restricted LP failed: {res.message}")
        return res

    def solve(self, members: Sequence[_Member], max_rounds: int = 600):
        """Returns (x_mat, lam, value) feasible for the members within the
        inner tolerance.

        Cutting planes first: an LP solution clamped against the box means
        missing cuts, not a too-small box.  The box only grows once the cut
        model is satisfied while pressing against it.
        """
        for _ in range(max_rounds):
            res = self._lp()
            x = res.x[: self.nx]
            lam = res.x[self.nx :]
            x_mat = _rmat(x, self.da)
            added = 0
            for member in members:
                gap_mat = x_mat - member.sigma(lam)
                vals, vecs = np.linalg.eigh(gap_mat)
                if vals[0] < -self.inner_tol:
                    self.cut_for(member, vecs[:, 0])
                    added += 1
            if added:
                continue
            if res.fun < self.floor:
                raise PrimalInfeasibleError(
                    f"dual objective fell below {self.floor:.3e}; primal infeasible"
                )
            pressed = np.abs(x).max() > self.box * (1 - 1e-6) or (
                self.nj and lam.size and lam.max() > self.lam_cap * (1 - 1e-6)
            )
            if pressed:
                self.box *= self.cfg.penalty_growth
                self.lam_cap *= self.cfg.penalty_growth
                continue
            return x_mat, lam, float(res.fun)
        raise NonconvergenceError("cutting-plane subproblem did not converge")


# ---------------------------------------------------------------------------
# local polish along continuous family parameters


def _coordinate_search(f, x0, lower, upper, sweeps: int = 3, iters: int = 28):
    """Minimize f over a box by per-coordinate golden-section sweeps."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x = np.array(x0, dtype=float)
    fx = f(x)
    for _ in range(sweeps):
        for k in range(x.size):
            lo, hi = float(lower[k]), float(upper[k])
            if hi - lo <= 0:
                continue
            a, b = lo, hi
            c = b - invphi * (b - a)
            d = a + invphi * (b - a)
            xc, xd = x.copy(), x.copy()
            xc[k], xd[k] = c, d
            fc, fd = f(xc), f(xd)
            for _ in range(iters):
                if fc < fd:
                    b, d, fd = d, c, fc
                    c = b - invphi * (b - a)
                    xc[k] = c
                    fc = f(xc)
                else:
                    a, c, fc = c, d, fd
                    d = a + invphi * (b - a)
                    xd[k] = d
                    fd = f(xd)
            best = c if fc < fd else d
            xk = x.copy()
            xk[k] = best
            fk = f(xk)
            if fk < fx:
                x, fx = xk, fk
    return x, fx


def _gradient_refine(f, x0, lower, upper, iters: int = 48):
    """Per-coordinate bisection on a central-difference slope.

    Value-based search stalls once function differences drown in rounding
    noise; the averaged slope still resolves the minimizer to ~1e-9 of the
    coordinate range, and boundary minima are returned exactly.
    """
    x = np.array(x0, dtype=float)
    for k in range(x.size):
        span = float(upper[k] - lower[k])
        if span <= 0:
            continue
        # near the cube root of machine epsilon: balances rounding noise in
        # the central difference against curvature bias
        h = max(2e-6, 1e-6 * span)

        def slope(t):
            xp, xm = x.copy(), x.copy()
            xp[k] = min(upper[k], t + h)
            xm[k] = max(lower[k], t - h)
            return (f(xp) - f(xm)) / (xp[k] - xm[k])

        lo = max(float(lower[k]), x[k] - 64.0 * h)
        hi = min(float(upper[k]), x[k] + 64.0 * h)
        s_lo, s_hi = slope(lo), slope(hi)
        if s_lo > 0 and s_hi > 0:
            x[k] = lo if lo > lower[k] else float(lower[k])
            continue
        if s_lo < 0 and s_hi < 0:
            x[k] = hi if hi < upper[k] else float(upper[k])
            continue
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if slope(mid) > 0:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 1e-12 * max(1.0, abs(hi)):
                break
        x[k] = 0.5 * (lo + hi)
    return x, f(x)


def _polish_member(p: GeneralizedProblem, family: BobFamily, index: int, score):
    """Locally minimize ``score(member_array)`` around a grid member.

    Returns (member, improved_score) or None when the family has no
    continuous parameters.
    """
    spec = family.refinement(index)
    if spec is None:
        return None
    x0, lower, upper, build = spec

    def f(params):
        return score(build(params))

    x_best, f_best = _coordinate_search(f, x0, lower, upper)
    x_best, f_ref = _gradient_refine(f, x_best, lower, upper)
    f_best = min(f_best, f_ref)
    arr = build(x_best)
    label = family.label(index) + " (refined)"
    member = _member_from_array(p, arr, label)
    member.source_index = index
    return member, f_best


# ---------------------------------------------------------------------------
# primal extraction


def _extract_from_candidates(
    p: GeneralizedProblem,
    x_mat: np.ndarray,
    lam: np.ndarray,
    candidates: list[tuple[int, _Member]],
    cfg: SolverConfig,
    family: BobFamily,
    scan: "_DualScan | None" = None,
) -> tuple[AliceMeasure, float]:
    """Build an Alice measure supported on near-kernel members.

    Atoms are near-null eigenvectors of X - sigma; nonnegative least squares
    picks their weights so the weights sum to the identity and every active
    multiplier's constraint is tight.
    """
    da = p.shape.dim_a
    atoms: list[tuple[int, np.ndarray]] = []  # (candidate position, unit vector)
    for pos, (idx, member) in enumerate(candidates):
        vals, vecs = np.linalg.eigh(x_mat - member.sigma(lam))
        for t in range(da):
            if vals[t] <= cfg.kernel_tol:
                atoms.append((pos, vecs[:, t]))
    if not atoms:
        raise ExtractionError("no active members within kernel tolerance; refine grid")

    active_j = [j for j in range(p.J) if lam[j] > 1e-9]
    b_active = np.array([p.b[j] for j in active_j])

    # the slack rows get a large weight: the identity part of the fit is
    # normalized away exactly afterwards, slack misfit is not
    slack_weight = 1e3

    def solve_weights(keep: list[int], slack_rhs: np.ndarray) -> tuple[np.ndarray, float]:
        cols = []
        for t in keep:
            pos, v = atoms[t]
            col = _rvec(np.outer(v, v.conj()))
            extra = [
                slack_weight * float((v.conj() @ candidates[pos][1].sa[j] @ v).real)
                for j in active_j
            ]
            cols.append(np.concatenate([col, extra]))
        mat = np.array(cols).T
        target = np.concatenate([_rvec(np.eye(da)), slack_weight * slack_rhs])
        w, _ = nnls(mat, target)
        resid = float(np.linalg.norm((mat @ w - target)[: da * da]))
        return w, resid

    def members_used(keep, weights):
        used = {}
        for t, w in zip(keep, weights):
            if w > 1e-10:
                used.setdefault(atoms[t][0], []).append((t, w))
        return used

    def corrected_support(used):
        """Weights per member, normalized to resolve the identity exactly."""
        raw = []
        total = np.zeros((da, da), complex)
        for pos, atom_list in sorted(used.items()):
            idx, _ = candidates[pos]
            w_mat = np.zeros((da, da), complex)
            for t, w in atom_list:
                v = atoms[t][1]
                w_mat += w * np.outer(v, v.conj())
            raw.append((pos, idx, w_mat))
            total += w_mat
        vals, vecs = np.linalg.eigh(total)
        if vals[0] <= 1e-12:
            raise ExtractionError(
                "extracted weights are numerically singular; refine grid"
            )
        corr = (vecs / np.sqrt(vals)) @ vecs.conj().T
        return [(pos, idx, corr @ w @ corr) for pos, idx, w in raw]

    def slack_values(support):
        """Constraint values eta_j of a corrected support, active rows only."""
        out = np.zeros(len(active_j))
        for col, j in enumerate(active_j):
            out[col] = sum(
                float(np.einsum("ij,ji->", w, candidates[pos][1].sa[j]).real)
                for pos, _, w in support
            ) - p.b[j]
        return out

    keep = list(range(len(atoms)))
    slack_rhs = b_active.copy()
    weights, resid = solve_weights(keep, slack_rhs)
    used = members_used(keep, weights)

    bound = (p.J + 1) * da * da
    while len(used) > bound:
        # drop the member contributing least, then re-fit
        drop = min(used, key=lambda pos: sum(w for _, w in used[pos]))
        keep = [t for t in keep if atoms[t][0] != drop]
        weights, resid = solve_weights(keep, slack_rhs)
        used = members_used(keep, weights)

    # the identity normalization shifts the constraint values at first order
    # in the fit residual; compensate the slack targets until the drift stops
    support = corrected_support(used)
    if active_j:
        last = np.inf
        for _ in range(3):
            drift = slack_values(support)
            worst = float(np.abs(drift).max())
            if worst < 1e-13 or worst > 0.5 * last:
                break
            last = worst
            slack_rhs = slack_rhs - drift
            weights, resid = solve_weights(keep, slack_rhs)
            used = members_used(keep, weights)
            support = corrected_support(used)

    # pre-normalization guard; the returned weights resolve the identity to
    # machine precision after the symmetric correction
    if resid > 1e-5:
        raise ExtractionError(
            f"primal extraction failed (reconstruction residual {resid:.3e}); refine grid"
        )

    entries = [
        (idx, w, candidates[pos][1].sc, candidates[pos][1].sa) for pos, idx, w in support
    ]
    eta_active = slack_values(support)
    if active_j and (eta_active > 1e-12).any():
        entries = _repair_feasibility(p, entries, active_j, eta_active, scan, bound)
        eta_active = np.array(
            [
                sum(float(np.einsum("ij,ji->", w, sa[j]).real) for _, w, _, sa in entries)
                - p.b[j]
                for j in active_j
            ]
        )
    # a family whose feasible set has empty interior (the repair's failure
    # mode) pins the constraint values at the noise floor; tolerate what the
    # weak-duality budget allows and reject anything larger
    violation = sum(
        lam[j] * max(0.0, eta_active[col]) for col, j in enumerate(active_j)
    )
    if violation > 8e-10:
        raise ExtractionError(
            f"extracted measure violates an active constraint (weighted {violation:.3e})"
        )
        if abs(lam[j] * eta_active[col]) > 1e-6:
            raise ExtractionError(
                f"complementary slackness residual {abs(lam[j] * eta_active[col]):.3e} too large"
            )

    alice = AliceMeasure(
        [(idx, Operator(w, hermitian_tol=np.inf)) for idx, w, _, _ in entries],
        family=family,
    )
    value = sum(float(np.einsum("ij,ji->", w, sc).real) for _, w, sc, _ in entries)
    return alice, float(value)


def _repair_feasibility(
    p: GeneralizedProblem,
    entries: list,
    active_j: list[int],
    eta_active: np.ndarray,
    scan: "_DualScan | None",
    bound: int,
) -> list:
    """Blend a vanishing amount of a strictly slack measure into an
    extracted one whose active constraint values sit infinitesimally on the
    wrong side (polish noise pins them; rescaling cannot move them)."""
    if scan is None:
        return entries
    da = p.shape.dim_a
    # uniform-weight constraint values for every family member
    tr_sa = np.einsum("jnii->jn", scan.sa).real
    eta_uniform = tr_sa - np.asarray(p.b)[:, None]
    worst = eta_uniform[active_j].max(axis=0)
    pick = int(np.argmin(worst))
    if worst[pick] >= -1e-9:
        # feasible set has empty interior over this family; nothing to blend
        return entries
    eta0 = eta_uniform[active_j, pick]
    tau = 0.0
    for col in range(len(active_j)):
        if eta_active[col] > 0:
            tau = max(tau, eta_active[col] / (eta_active[col] - eta0[col]))
    tau = min(1.5 * tau, 1e-3)
    if len(entries) >= bound and pick not in [idx for idx, _, _, _ in entries]:
        # keep the outcome count at the bound: fold out the lightest entry
        # and renormalize the rest before mixing
        drop = min(range(len(entries)), key=lambda i: float(np.trace(entries[i][1]).real))
        entries = [e for i, e in enumerate(entries) if i != drop]
        total = sum(w for _, w, _, _ in entries)
        vals, vecs = np.linalg.eigh(total)
        if vals[0] <= 1e-12:
            raise ExtractionError("cannot renormalize the pruned measure; refine grid")
        corr = (vecs / np.sqrt(vals)) @ vecs.conj().T
        entries = [(idx, corr @ w @ corr, sc, sa) for idx, w, sc, sa in entries]
    sc_pick, sa_pick = scan.member_data(pick)
    mixed = [(idx, (1.0 - tau) * w, sc, sa) for idx, w, sc, sa in entries]
    for i, (idx, w, sc, sa) in enumerate(mixed):
        if idx == pick:
            mixed[i] = (idx, w + tau * np.eye(da), sc, sa)
            break
    else:
        mixed.append((pick, tau * np.eye(da), sc_pick, sa_pick))
    return mixed


def extract_primal(
    p: GeneralizedProblem, d: DualPoint, cfg: SolverConfig = SolverConfig()
) -> AliceMeasure:
    """Extract a finite Alice measure from the kernel structure of a feasible
    dual point, using the problem's family as the candidate set."""
    _require_inequalities(p)
    scan = _DualScan(p, chunk=cfg.chunk)
    lam = np.asarray(d.lam, dtype=float)
    margins = scan.margins(d.x.mat, lam)
    order = np.argsort(margins, kind="stable")
    candidates = []
    for i in order:
        if margins[i] > cfg.kernel_tol:
            break
        sc, sa = scan.member_data(int(i))
        candidates.append((int(i), _Member(sc, sa, scan.family.label(int(i)), int(i))))
        if len(candidates) >= 4 * (p.J + 1) * p.shape.dim_a**2:
            break
    if not candidates:
        raise ExtractionError("no active members within kernel tolerance; refine grid")
    candidates = _dedupe_candidates(candidates, scan.family)
    alice, _ = _extract_from_candidates(p, d.x.mat, lam, candidates, cfg, scan.family, scan)
    return alice


def _refine_active_point(
    p: GeneralizedProblem,
    members: list[_Member],
    x_mat: np.ndarray,
    lam: np.ndarray,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Newton-polish a near-optimal dual point on its active structure.

    Cutting planes give a value-accurate but location-sloppy vertex; this
    solves the square optimality system (zero slack eigenvalue per active
    member, kernel atoms resolving the identity, active constraints tight)
    with the members held fixed.  Returns None when the structure is
    degenerate or the solve does not clearly succeed.
    """
    from scipy.optimize import least_squares

    da = p.shape.dim_a
    act_j = [j for j in range(p.J) if lam[j] > 1e-9]
    k = len(members)
    if k == 0 or k + len(act_j) > 3 * da * da:
        return None

    def pieces(v):
        x = _rmat(v[: da * da], da)
        lam_f = lam.copy()
        for c, j in enumerate(act_j):
            lam_f[j] = v[da * da + c]
        t = v[da * da + len(act_j) :]
        return x, lam_f, t

    def residual(v):
        x, lam_f, t = pieces(v)
        out = []
        recon = np.zeros((da, da), complex)
        slacks = np.zeros(len(act_j))
        for i, m in enumerate(members):
            gap = x - m.sigma(lam_f)
            vals, vecs = np.linalg.eigh(gap)
            out.append(vals[0])
            u = vecs[:, 0]
            recon += t[i] * np.outer(u, u.conj())
            for c, j in enumerate(act_j):
                slacks[c] += t[i] * float((u.conj() @ m.sa[j] @ u).real)
        out.extend(_rvec(recon - np.eye(da)))
        for c, j in enumerate(act_j):
            out.append(slacks[c] - p.b[j])
        return np.asarray(out)

    # starting weights from a quick nonnegative fit of the current atoms
    atoms = []
    for m in members:
        vals, vecs = np.linalg.eigh(x_mat - m.sigma(lam))
        if vals.size > 1 and vals[1] - vals[0] < 1e-6:
            return None  # kernel not clearly one-dimensional
        atoms.append(_rvec(np.outer(vecs[:, 0], vecs[:, 0].conj())))
    t0, _ = nnls(np.array(atoms).T, _rvec(np.eye(da)))
    v0 = np.concatenate([_rvec(x_mat), [lam[j] for j in act_j], t0])
    try:
        sol = least_squares(residual, v0, method="lm", xtol=1e-15, ftol=1e-15, max_nfev=400)
    except Exception:
        return None
    res = residual(sol.x)
    if np.abs(res).max() > 1e-9:
        return None
    x_new, lam_new, t_new = pieces(sol.x)
    if (lam_new < -1e-12).any() or (t_new < -1e-9).any():
        return None
    return x_new, np.maximum(lam_new, 0.0)


def _dedupe_candidates(
    candidates: list[tuple[int, _Member]], family: BobFamily, tol: float = 1e-6
) -> list[tuple[int, _Member]]:
    """Merge operationally identical members: distinct family indices can
    carry the same POVM exactly (rotations by theta and theta + pi), and
    repeated local polish produces copies within its own resolution.  The
    first occurrence wins, so order candidates best margin first."""
    kept: list[tuple[int, _Member]] = []
    arrays: list[np.ndarray] = []
    for idx, member in candidates:
        arr = (
            member.member_array
            if member.member_array is not None
            else family.member(member.grid_index)
        )
        if any(arr.shape == seen.shape and np.abs(arr - seen).max() < tol for seen in arrays):
            continue
        kept.append((idx, member))
        arrays.append(arr)
    return kept


# ---------------------------------------------------------------------------
# public feasibility probe


def feasibility_margin(
    p: GeneralizedProblem, d: DualPoint, omegas: Sequence[int] | None = None
) -> tuple[float, int, np.ndarray]:
    """Smallest eigenvalue of X - sigma_omega(lam) over the index set, with
    the worst member and its minimizing eigenvector (a valid cut direction)."""
    scan = _DualScan(p)
    if omegas is None:
        idx = np.arange(len(scan))
    else:
        idx = np.asarray(list(omegas), dtype=int)
        if idx.size == 0:
            raise ValueError("empty index set")
    lam = np.asarray(d.lam, dtype=float)
    sig = scan.sigma(lam)[idx]
    margins = _min_eigs(d.x.mat[None] - sig)
    pos = int(np.argmin(margins))
    worst = int(idx[pos])
    vals, vecs = np.linalg.eigh(d.x.mat - sig[pos])
    return float(margins[pos]), worst, vecs[:, 0]


# ---------------------------------------------------------------------------
# solvers


def _require_inequalities(p: GeneralizedProblem) -> None:
    if any(kind == EQUALITY for kind in p.kinds):
        raise ValueError("expand equality constraints before solving")


def _problem_scale(p: GeneralizedProblem) -> float:
    s = max((op.norm() for op in p.c), default=0.0)
    return max(1.0, s)


def _seed_indices(scan: _DualScan, cfg: SolverConfig) -> list[int]:
    n = len(scan)
    count = min(n, 8)
    return sorted(set(np.linspace(0, n - 1, count).astype(int).tolist()))


def _finalize(
    p: GeneralizedProblem,
    cfg: SolverConfig,
    scan: _DualScan,
    x_mat: np.ndarray,
    lam: np.ndarray,
    extra_members: list[_Member],
    iterations: int,
    restricted_values: tuple[float, ...] = (),
) -> tuple[DualPoint, SolveReport]:
    base_n = len(scan)
    margins = scan.margins(x_mat, lam)
    all_margins = [margins.min()]
    for m in extra_members:
        all_margins.append(float(np.linalg.eigvalsh(x_mat - m.sigma(lam))[0]))
    delta = max(0.0, -min(all_margins))
    x_mat = x_mat + delta * np.eye(p.shape.dim_a)
    margins = margins + delta

    family = scan.family
    if extra_members:
        family = family.with_members(
            [m.member_array for m in extra_members],
            labels=[m.label for m in extra_members],
        )

    # polished members take precedence over their grid parents
    active_extras: list[tuple[int, _Member]] = []
    superseded: set[int] = set()
    for k, m in enumerate(extra_members):
        margin = float(np.linalg.eigvalsh(x_mat - m.sigma(lam))[0])
        if margin <= cfg.kernel_tol:
            active_extras.append((base_n + k, m))
            if m.source_index is not None:
                superseded.add(m.source_index)

    candidates: list[tuple[int, _Member]] = list(active_extras)
    order = np.argsort(margins, kind="stable")
    for i in order:
        if margins[i] > cfg.kernel_tol:
            break
        if int(i) in superseded:
            continue
        sc, sa = scan.member_data(int(i))
        candidates.append((int(i), _Member(sc, sa, scan.family.label(int(i)), int(i))))
        if len(candidates) >= 4 * (p.J + 1) * p.shape.dim_a**2:
            break
    candidates = _dedupe_candidates(candidates, scan.family)

    dual_point = DualPoint(Operator(x_mat, hermitian_tol=np.inf), tuple(np.maximum(lam, 0.0)))
    s_val = dual_objective(p, dual_point)
    alice, f_val = _extract_from_candidates(p, x_mat, lam, candidates, cfg, family, scan)
    gap = s_val - f_val
    report = SolveReport(
        dual_value=s_val,
        primal_value=f_val,
        gap=gap,
        active_omegas=tuple(idx for idx, _ in alice.support),
        iterations=iterations,
        feasibility_margin=float(min(all_margins) + delta),
        weak_duality_pairs=((s_val, f_val),),
        restricted_values=restricted_values,
        alice=alice,
        family=family,
    )
    if gap > cfg.eps_gap:
        report.status = "gap_not_met"
        raise NonconvergenceError(
            f"duality gap {gap:.3e} exceeds tolerance {cfg.eps_gap:.3e}"
        )
    return dual_point, report


def solve_dual(
    p: GeneralizedProblem, cfg: SolverConfig = SolverConfig()
) -> tuple[DualPoint, SolveReport]:
    """Solve the dual over the problem's Bob family and extract a primal.

    Uses the scalar fast path when ``cfg.scalar_x_fast_path`` is set (the
    caller, or the symmetry module, must have certified that an optimal X
    proportional to the identity exists); otherwise runs the exchange loop.
    """
    _require_inequalities(p)
    if cfg.scalar_x_fast_path:
        return solve_dual_scalar_x(p, cfg)
    scan = _DualScan(p, chunk=cfg.chunk)
    scale = _problem_scale(p)
    real_only = bool(
        np.abs(scan.sc.imag).max() < 1e-14
        and (scan.sa.size == 0 or np.abs(scan.sa.imag).max() < 1e-14)
    )
    rd = _RestrictedDual(p.shape.dim_a, np.asarray(p.b), cfg, scale, real_only)
    da = p.shape.dim_a

    members: list[_Member] = []
    grid_in_active: set[int] = set()

    def add_grid_member(i: int) -> _Member:
        sc, sa = scan.member_data(i)
        m = _Member(sc, sa, scan.family.label(i), i)
        members.append(m)
        grid_in_active.add(i)
        return m

    rng = np.random.default_rng(cfg.seed)
    for i in _seed_indices(scan, cfg):
        m = add_grid_member(i)
        sig0 = m.sigma(np.zeros(p.J))
        vals, vecs = np.linalg.eigh(sig0)
        rd.cut_for(m, vecs[:, -1])
    for e in range(da):
        v = np.zeros(da, complex)
        v[e] = 1.0
        rd.cut_for(members[0], v)
    v = rng.standard_normal(da) + 1j * rng.standard_normal(da)
    rd.cut_for(members[0], v / np.linalg.norm(v))

    extra: list[_Member] = []
    polished_windows = max(cfg.kernel_tol, 10 * cfg.eps_feas)
    restricted_values: list[float] = []
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        x_mat, lam, restricted_value = rd.solve(members + extra)
        restricted_values.append(restricted_value)
        margins = scan.margins(x_mat, lam)
        worst = int(np.argmin(margins))
        if margins[worst] < -cfg.eps_feas:
            new_member = None
            if cfg.refine_local:
                polished = _polish_member(
                    p,
                    scan.family,
                    worst,
                    lambda arr: float(
                        np.linalg.eigvalsh(
                            x_mat - _member_from_array(p, arr, "").sigma(lam)
                        )[0]
                    ),
                )
                if polished is not None and polished[1] < margins[worst] - 1e-12:
                    new_member = polished[0]
                    extra.append(new_member)
            if new_member is None:
                if worst in grid_in_active:
                    # the subproblem already holds this member; tighten with a cut
                    pos = [m.grid_index for m in members].index(worst)
                    gap_mat = x_mat - members[pos].sigma(lam)
                    vals, vecs = np.linalg.eigh(gap_mat)
                    rd.cut_for(members[pos], vecs[:, 0])
                    continue
                new_member = add_grid_member(worst)
            vals, vecs = np.linalg.eigh(x_mat - new_member.sigma(lam))
            rd.cut_for(new_member, vecs[:, 0])
            continue
        # grid is clean; polish near-active members for extraction quality
        dirty = False
        if cfg.refine_local:
            near = [i for i in np.argsort(margins)[:8] if margins[i] <= polished_windows]
            refined_parents = {m.label for m in extra}
            for i in near:
                label = scan.family.label(int(i)) + " (refined)"
                if label in refined_parents:
                    continue
                polished = _polish_member(
                    p,
                    scan.family,
                    int(i),
                    lambda arr: float(
                        np.linalg.eigvalsh(
                            x_mat - _member_from_array(p, arr, "").sigma(lam)
                        )[0]
                    ),
                )
                if polished is None:
                    break
                member, value = polished
                if value < min(margins[i], 0.0) - 1e-13:
                    extra.append(member)
                    rd.cut_for(member, np.linalg.eigh(x_mat - member.sigma(lam))[1][:, 0])
                    if value < -cfg.eps_feas:
                        dirty = True
        if dirty:
            continue
        if not extra:
            # families without continuous parameters: Newton-polish the
            # vertex on its active structure before extraction
            active = [
                m
                for m in members
                if float(np.linalg.eigvalsh(x_mat - m.sigma(lam))[0]) <= cfg.kernel_tol
            ]
            active = [
                m
                for _, m in _dedupe_candidates(
                    list(enumerate(active)), scan.family
                )
            ]
            refined = _refine_active_point(p, active, x_mat, lam)
            if refined is not None:
                x_ref, lam_ref = refined
                ok = scan.margins(x_ref, lam_ref).min() >= -cfg.eps_feas and all(
                    float(np.linalg.eigvalsh(x_ref - m.sigma(lam_ref))[0])
                    >= -cfg.eps_feas
                    for m in members
                )
                if ok:
                    x_mat, lam = x_ref, lam_ref
        return _finalize(
            p, cfg, scan, x_mat, lam, extra, iterations, tuple(restricted_values)
        )
    raise NonconvergenceError(f"exchange loop did not converge in {cfg.max_iters} iterations")


def _envelope_slope(
    p: GeneralizedProblem,
    scan: _DualScan,
    lam: np.ndarray,
    j: int,
    b: np.ndarray,
    da: int,
) -> float | None:
    """Exact one-sided derivative of the scalar dual value in lam_j, taken at
    the locally polished argmax member (envelope differentiation)."""
    tops = scan.top_eigs(lam)
    best = _polish_member(
        p,
        scan.family,
        int(np.argmax(tops)),
        lambda arr: -float(
            np.linalg.eigvalsh(_member_from_array(p, arr, "").sigma(lam))[-1]
        ),
    )
    if best is None:
        return None
    member = best[0]
    vals, vecs = np.linalg.eigh(member.sigma(lam))
    u = vecs[:, -1]
    dv = float((u.conj() @ (-member.sa[j]) @ u).real)
    return da * dv + float(b[j])


def _bisect_multipliers(
    p: GeneralizedProblem, scan: _DualScan, lam: np.ndarray, b: np.ndarray, da: int
) -> np.ndarray:
    """Refine positive multipliers by bisection on the envelope derivative;
    the dual value is convex in each multiplier so the slope is monotone."""
    lam = lam.copy()
    for j in range(p.J):
        if lam[j] <= 0.0:
            continue
        slope = _envelope_slope(p, scan, lam, j, b, da)
        if slope is None:
            return lam
        h = max(1e-3, 1e-3 * lam[j])
        lo, hi = lam[j], lam[j]
        if slope > 0:
            for _ in range(40):
                lo = max(0.0, lo - h)
                trial = lam.copy()
                trial[j] = lo
                if lo == 0.0 or _envelope_slope(p, scan, trial, j, b, da) <= 0:
                    break
                h *= 2
            else:
                continue
            if lo == 0.0:
                trial = lam.copy()
                trial[j] = 0.0
                if _envelope_slope(p, scan, trial, j, b, da) > 0:
                    lam[j] = 0.0
                    continue
        else:
            for _ in range(40):
                hi = hi + h
                trial = lam.copy()
                trial[j] = hi
                if _envelope_slope(p, scan, trial, j, b, da) >= 0:
                    break
                h *= 2
            else:
                continue
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            trial = lam.copy()
            trial[j] = mid
            if _envelope_slope(p, scan, trial, j, b, da) > 0:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-12 * max(1.0, hi):
                break
        lam[j] = 0.5 * (lo + hi)
    return lam


def _golden_min(f, lo: float, hi: float, iters: int = 80):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = c if fc < fd else d
    return x, min(fc, fd)


def solve_dual_scalar_x(
    p: GeneralizedProblem, cfg: SolverConfig = SolverConfig()
) -> tuple[DualPoint, SolveReport]:
    """Fast path for problems whose optimal X is a multiple of the identity:
    for each multiplier vector the best scalar is the largest eigenvalue of
    sigma over the family, and the outer minimization is one-dimensional
    golden section (or cyclic coordinate descent for several multipliers)."""
    _require_inequalities(p)
    scan = _DualScan(p, chunk=cfg.chunk)
    da = p.shape.dim_a
    b = np.asarray(p.b)
    scale = _problem_scale(p)
    floor = cfg.infeasible_floor if cfg.infeasible_floor is not None else -1e5 * scale

    def v_of(lam: np.ndarray) -> float:
        return float(scan.top_eigs(lam).max())

    def s_of(lam: np.ndarray) -> float:
        return da * v_of(lam) + float(lam @ b) if p.J else da * v_of(lam)

    iterations = 1
    if p.J == 0:
        lam = np.zeros(0)
    elif p.J == 1:
        hi = 1.0
        while s_of(np.array([2 * hi])) < s_of(np.array([hi])) - 1e-14:
            hi *= 2
            iterations += 1
            if s_of(np.array([hi])) < floor or hi > 1e8:
                raise PrimalInfeasibleError(
                    "dual objective decreases without bound; primal infeasible"
                )
        lam_opt, _ = _golden_min(lambda t: s_of(np.array([t])), 0.0, 2 * hi)
        lam = np.array([lam_opt])
    else:
        lam = np.zeros(p.J)
        for _ in range(24):
            moved = 0.0
            for j in range(p.J):
                def fj(t):
                    trial = lam.copy()
                    trial[j] = t
                    return s_of(trial)

                hi = max(1.0, 2 * lam[j])
                while fj(2 * hi) < fj(hi) - 1e-14:
                    hi *= 2
                    if hi > 1e8:
                        raise PrimalInfeasibleError(
                            "dual objective decreases without bound; primal infeasible"
                        )
                new_j, _ = _golden_min(fj, 0.0, 2 * hi)
                moved = max(moved, abs(new_j - lam[j]))
                lam[j] = new_j
            iterations += 1
            if moved < 1e-10:
                break

    tangents: list[_Member] = []

    def polish_round(lam_now: np.ndarray, into: list[_Member]) -> int:
        """Polish the near-top members at the current multipliers into the
        given list; returns how many were added (-1: nothing to polish)."""
        tops = scan.top_eigs(lam_now)
        window = max(1e-4 * scale, 10 * cfg.kernel_tol)
        added = 0
        for i in np.argsort(tops)[::-1][:8]:
            if tops[i] < tops.max() - window:
                break
            polished = _polish_member(
                p,
                scan.family,
                int(i),
                lambda arr: -float(
                    np.linalg.eigvalsh(_member_from_array(p, arr, "").sigma(lam_now))[-1]
                ),
            )
            if polished is None:
                return -1
            member = polished[0]
            if any(
                np.abs(member.member_array - m.member_array).max() < 1e-9
                for m in into
            ):
                continue
            into.append(member)
            added += 1
        return added

    extras: list[_Member] = []
    if cfg.refine_local:

        def v_aug(lam_vec: np.ndarray) -> float:
            v = v_of(lam_vec)
            for m in tangents:
                v = max(v, float(np.linalg.eigvalsh(m.sigma(lam_vec))[-1]))
            return v

        def s_aug(lam_vec: np.ndarray) -> float:
            return da * v_aug(lam_vec) + (float(lam_vec @ b) if p.J else 0.0)

        # alternate polishing with multiplier re-optimization over the
        # augmented envelope; each polished member is an exact tangent, so a
        # few rounds pin the multipliers down
        if p.J:
            for _ in range(6):
                added = polish_round(lam, tangents)
                if added <= 0 or len(tangents) > 64:
                    break
                s_before = s_aug(lam)
                if p.J == 1:
                    hi_aug = max(2.0, 4.0 * lam[0])
                    lam_opt, _ = _golden_min(lambda t: s_aug(np.array([t])), 0.0, hi_aug)
                    lam_new = np.array([lam_opt])
                else:
                    lam_new = lam.copy()
                    for j in range(p.J):

                        def fj(t):
                            trial = lam_new.copy()
                            trial[j] = t
                            return s_aug(trial)

                        top, _ = _golden_min(fj, 0.0, max(2.0, 4.0 * lam_new[j]))
                        lam_new[j] = top
                iterations += 1
                converged = (
                    np.abs(lam_new - lam).max() < 1e-10
                    and s_aug(lam_new) > s_before - 1e-13
                )
                lam = lam_new
                if converged:
                    break
            # prefer the minimal multipliers within a flat optimal valley;
            # a vanishing multiplier makes its slackness condition vacuous
            s_now = s_aug(lam)
            for j in range(p.J):
                if lam[j] == 0.0:
                    continue
                trial = lam.copy()
                trial[j] = 0.0
                if s_aug(trial) <= s_now + 1e-11:
                    lam = trial
                    s_now = s_aug(lam)
            lam = _bisect_multipliers(p, scan, lam, b, da)
        # fresh polish at the final multipliers; only these feed extraction
        polish_round(lam, extras)

    v = v_of(lam)
    for m in tangents + extras:
        v = max(v, float(np.linalg.eigvalsh(m.sigma(lam))[-1]))
    x_mat = v * np.eye(da)
    return _finalize(p, cfg, scan, x_mat, lam, extras, iterations)


def solve_global_dual(
    m_outcomes: int,
    c: Sequence[Operator],
    a: Sequence[Sequence[Operator]],
    b: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
) -> tuple[Operator, tuple[float, ...], float]:
    """Dual of the unrestricted-measurement problem: minimize Tr X + lam . b
    subject to X >= z_m(lam) for the finitely many outcomes, X on the joint
    space.  The exchange loop degenerates to this fixed constraint set."""
    if len(c) != m_outcomes:
        raise ValueError("need one objective operator per outcome")
    d = c[0].dim
    b = np.asarray(b, dtype=float)
    c_stack = np.stack([op.mat for op in c])
    a_stack = (
        np.stack([[op.mat for op in row] for row in a])
        if len(b)
        else np.zeros((0, m_outcomes, d, d), complex)
    )
    scale = max(1.0, max(float(np.linalg.norm(op.mat)) for op in c))
    real_only = bool(
        np.abs(c_stack.imag).max() < 1e-14
        and (a_stack.size == 0 or np.abs(a_stack.imag).max() < 1e-14)
    )
    rd = _RestrictedDual(d, b, cfg, scale, real_only)
    members = [
        _Member(c_stack[m], a_stack[:, m], f"outcome[{m}]", m) for m in range(m_outcomes)
    ]
    for member in members:
        vals, vecs = np.linalg.eigh(member.sc)
        rd.cut_for(member, vecs[:, -1])
    for e in range(d):
        v = np.zeros(d, complex)
        v[e] = 1.0
        rd.cut_for(members[0], v)
    x_mat, lam, value = rd.solve(members)
    margin = min(
        float(np.linalg.eigvalsh(x_mat - m.sigma(lam))[0]) for m in members
    )
    delta = max(0.0, -margin)
    x_mat = x_mat + delta * np.eye(d)
    value = float(np.trace(x_mat).real + lam @ b)
    return Operator(x_mat, hermitian_tol=np.inf), tuple(np.maximum(lam, 0.0)), value

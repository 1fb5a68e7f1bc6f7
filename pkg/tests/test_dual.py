import numpy as np
import pytest

from seqdisc import (
    AliceMeasure,
    BipartiteShape,
    DualPoint,
    ExplicitBobFamily,
    ExtractionError,
    GeneralizedProblem,
    Operator,
    Povm,
    PrimalInfeasibleError,
    SolverConfig,
    build_inconclusive,
    dual_objective,
    extract_primal,
    feasibility_margin,
    identity,
    objective,
    projector,
    solve_dual,
    solve_dual_scalar_x,
    solve_global_dual,
    tensor,
)
from seqdisc import trine

from helpers import random_instance

LAM_BREAK = 0.5 + 0.5 / np.sqrt(3.0)


@pytest.fixture(scope="module")
def analytic_025():
    alice, fam, seq = trine.optimal_measurement(0.25)
    prob = trine.inconclusive_problem(0.25, family=fam)
    lam, trx, x = trine.dual_solution(0.25)
    return prob, alice, DualPoint(x, (lam,))


def test_dual_objective_values(analytic_025):
    prob, _, point = analytic_025
    assert dual_objective(prob, point) == pytest.approx(0.7285533905932737, abs=1e-12)
    assert dual_objective(prob, point) == pytest.approx(0.728553, abs=1e-6)
    zero = DualPoint(Operator(np.zeros((2, 2))), (0.0,))
    assert dual_objective(prob, zero) == 0.0


def test_dual_objective_identity_no_constraints():
    fam = ExplicitBobFamily([trine.bob_template(0.0)])
    prob = GeneralizedProblem(
        BipartiteShape(2, 2),
        tuple(trine.trine_states()[0]) + (Operator(np.zeros((4, 4))),),
        (),
        (),
        fam,
    )
    assert dual_objective(prob, DualPoint(identity(2))) == pytest.approx(2.0)


def test_dual_point_rejects_negative_multiplier():
    with pytest.raises(ValueError):
        DualPoint(identity(2), (-0.1,))


def test_feasibility_margin_zero_at_kernel_member(analytic_025):
    prob, _, point = analytic_025
    margin, worst, vec = feasibility_margin(prob, point)
    assert abs(margin) < 1e-9
    # the minimizing eigenvector spans the kernel direction of that member
    _, perp = trine.trine_vectors()
    overlap = abs(vec.conj() @ perp[worst])
    assert overlap == pytest.approx(1.0, abs=1e-8)


def test_feasibility_margin_shifted_point(analytic_025):
    prob, _, point = analytic_025
    big = DualPoint(point.x + identity(2), point.lam)
    margin, _, _ = feasibility_margin(prob, big)
    assert margin >= 1.0 - 1e-9


def test_feasibility_margin_goes_negative_for_huge_multiplier(analytic_025):
    prob, _, point = analytic_025
    pumped = DualPoint(point.x, (10.0,))
    margin, _, _ = feasibility_margin(prob, pumped)
    assert margin < -0.1


def test_feasibility_margin_rejects_empty_set(analytic_025):
    prob, _, point = analytic_025
    with pytest.raises(ValueError):
        feasibility_margin(prob, point, omegas=[])


def test_scalar_solver_matches_closed_form():
    prob = trine.inconclusive_problem(0.25)
    point, report = solve_dual_scalar_x(prob, SolverConfig())
    lam_star, trx, _ = trine.dual_solution(0.25)
    assert point.lam[0] == pytest.approx(lam_star, abs=1e-6)
    assert point.lam[0] == pytest.approx(0.853553, abs=1e-6)
    assert report.dual_value == pytest.approx(trine.success_probability(0.25), abs=1e-6)
    # the scalar matches the positive branch of the eigenvalue envelope
    lam = point.lam[0]
    branch = lam * (3 * lam - 1) / (4 * (2 * lam - 1))
    assert point.x.mat[0, 0].real == pytest.approx(branch, abs=1e-6)


def test_scalar_solver_min_error_valley():
    prob = trine.inconclusive_problem(0.0)
    point, report = solve_dual_scalar_x(prob, SolverConfig())
    # every multiplier up to the branch point is optimal at zero inconclusive
    # probability; the value is what matters
    assert report.dual_value == pytest.approx(0.9330127018922193, abs=1e-6)
    assert 0.0 <= point.lam[0] <= LAM_BREAK + 1e-6
    assert trine.dual_solution(0.0)[0] == pytest.approx(LAM_BREAK, abs=1e-12)


def test_scalar_solver_no_multiplier_search_when_unconstrained():
    fam = trine.optimal_measurement(0.0)[1]
    states = trine.trine_states()[0]
    prob = GeneralizedProblem(
        BipartiteShape(2, 2),
        tuple(states) + (Operator(np.zeros((4, 4))),),
        (),
        (),
        fam,
    )
    point, report = solve_dual_scalar_x(prob, SolverConfig())
    assert point.lam == ()
    assert report.dual_value == pytest.approx(0.9330127018922193, abs=1e-9)


def test_single_state_problem_dual_value_one():
    rho = tensor(projector([1.0, 0.0]), projector([0.6, 0.8]))
    fam = ExplicitBobFamily([Povm([np.eye(2)])])
    prob = GeneralizedProblem(BipartiteShape(2, 2), (rho,), (), (), fam)
    point, report = solve_dual(prob, SolverConfig())
    assert report.dual_value == pytest.approx(1.0, abs=1e-8)
    assert report.primal_value == pytest.approx(1.0, abs=1e-8)
    assert len(report.alice) == 1
    assert np.allclose(report.alice.support[0][1].mat, np.eye(2), atol=1e-8)


def test_exchange_solver_on_grid():
    prob = trine.inconclusive_problem(0.25, theta_steps=180, alpha_steps=16)
    point, report = solve_dual(prob, SolverConfig())
    assert report.gap <= 1e-4
    assert abs(report.dual_value - trine.success_probability(0.25)) < 1e-3
    assert report.feasibility_margin >= -1e-7
    # exchange monotonicity: the restricted values never decrease
    diffs = np.diff(np.asarray(report.restricted_values))
    assert (diffs >= -1e-9).all()


def test_extract_primal_matches_closed_form(analytic_025):
    prob, alice_ref, point = analytic_025
    alice = extract_primal(prob, point)
    assert len(alice) == 3
    _, perp = trine.trine_vectors()
    got = {idx: w.mat for idx, w in alice.support}
    for k in range(3):
        expected = (2.0 / 3.0) * np.outer(perp[k], perp[k])
        assert np.abs(got[k] - expected).max() < 1e-8
    assert objective(prob, alice) == pytest.approx(0.7285533905932737, abs=1e-9)


def test_extract_primal_single_state():
    rho = tensor(projector([1.0, 0.0]), projector([0.0, 1.0]))
    fam = ExplicitBobFamily([Povm([np.eye(2)])])
    prob = GeneralizedProblem(BipartiteShape(2, 2), (rho,), (), (), fam)
    point = DualPoint(Operator(projector([1.0, 0.0]).mat))
    alice = extract_primal(prob, point)
    assert len(alice) == 1
    assert np.allclose(alice.support[0][1].mat, np.eye(2), atol=1e-9)


def test_extract_primal_fails_off_optimum(analytic_025):
    prob, _, point = analytic_025
    inflated = DualPoint(point.x + 0.1 * identity(2), point.lam)
    with pytest.raises(ExtractionError):
        extract_primal(prob, inflated)


def test_global_dual_orthogonal_states():
    states = [tensor(projector(v), projector(v)) for v in ([1, 0], [0, 1])]
    c = tuple(0.5 * s for s in states)
    _, _, value = solve_global_dual(2, c, (), ())
    assert value == pytest.approx(1.0, abs=1e-8)


def test_global_dual_unambiguous_regime():
    for p_i in (0.25, 0.3, 0.4):
        prob = trine.inconclusive_problem(p_i, theta_steps=6, alpha_steps=2)
        _, _, value = solve_global_dual(prob.M, prob.c, prob.a, prob.b)
        assert value + p_i == pytest.approx(1.0, abs=1e-3)


def test_global_dual_dominates_sequential_primal():
    prob = trine.inconclusive_problem(0.0, theta_steps=6, alpha_steps=2)
    _, _, value = solve_global_dual(prob.M, prob.c, prob.a, prob.b)
    assert value >= 0.9330127018922193 - 1e-6


def test_primal_infeasible_detection():
    # an inconclusive probability above what any measurement can produce
    states, _, _ = trine.trine_states()
    normalized = [3.0 * s for s in states]
    fam = trine.grid_family(theta_steps=12, alpha_steps=3)
    base = build_inconclusive(normalized, [1 / 3] * 3, 0.5, fam)
    impossible = GeneralizedProblem(base.shape, base.c, base.a, (-2.0,), fam)
    with pytest.raises(PrimalInfeasibleError):
        solve_dual_scalar_x(impossible, SolverConfig())
    with pytest.raises(PrimalInfeasibleError):
        solve_dual(impossible, SolverConfig(max_iters=60))


def test_weak_duality_pairs_recorded():
    prob = trine.inconclusive_problem(0.25, theta_steps=90, alpha_steps=7)
    _, report = solve_dual(prob, SolverConfig())
    assert report.weak_duality_pairs
    for s, f in report.weak_duality_pairs:
        assert s >= f - 1e-9


def test_random_instances_solve_to_tight_gap():
    rng = np.random.default_rng(101)
    for _ in range(4):
        prob = random_instance(rng)
        _, report = solve_dual(prob, SolverConfig(eps_gap=1e-6))
        assert report.gap <= 1e-6
        assert report.feasibility_margin >= -1e-7
        from seqdisc import check_outcome_bound

        assert check_outcome_bound(report.alice, prob)

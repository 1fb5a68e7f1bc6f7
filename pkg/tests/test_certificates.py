import numpy as np
import pytest

from seqdisc import (
    AliceMeasure,
    BipartiteShape,
    DualPoint,
    ExplicitBobFamily,
    GeneralizedProblem,
    Operator,
    Povm,
    SolverConfig,
    certify,
    check_condition_2,
    check_condition_3,
    check_outcome_bound,
    duality_gap,
    identity,
    solve_dual,
)
from seqdisc.certificates import InfeasibleCandidateError
from seqdisc import trine

from helpers import random_alice, random_instance, random_povm


@pytest.fixture(scope="module")
def analytic(request):
    alice, fam, _ = trine.optimal_measurement(0.25)
    prob = trine.inconclusive_problem(0.25, family=fam)
    lam, _, x = trine.dual_solution(0.25)
    return prob, alice, DualPoint(x, (lam,))


def perturbed_measurement(p_i=0.25, angle=0.1):
    """Closed-form triple with one Bob POVM rotated out of alignment."""
    alice, fam, _ = trine.optimal_measurement(p_i)
    rot = np.array(
        [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]
    )
    members = [fam.member(i).copy() for i in range(3)]
    members[0] = np.einsum("ij,mjk,lk->mil", rot, members[0], rot)
    fam2 = ExplicitBobFamily([Povm(m) for m in members])
    alice2 = AliceMeasure([(i, w) for i, w in alice.support], family=fam2)
    return alice2, fam2


def test_condition_2_passes_on_closed_form(analytic):
    prob, alice, point = analytic
    report = check_condition_2(prob, alice, point, tol=1e-8)
    assert report.condition2
    assert report.cond14_residual < 1e-12
    assert report.cond15_residual < 1e-12
    assert report.dual_margin > -1e-12


def test_condition_2_fails_on_rotated_bob(analytic):
    prob, _, point = analytic
    alice2, fam2 = perturbed_measurement()
    prob2 = trine.inconclusive_problem(0.25, family=fam2)
    report = check_condition_2(prob2, alice2, point, tol=1e-8)
    assert report.cond14_residual > 1e-3
    assert not report.condition2


def test_condition_2_trivial_slackness_without_constraints():
    states = trine.trine_states()[0]
    alice, fam, _ = trine.optimal_measurement(0.0)
    prob = GeneralizedProblem(
        BipartiteShape(2, 2),
        tuple(states) + (Operator(np.zeros((4, 4))),),
        (),
        (),
        fam,
    )
    lam, _, x = trine.dual_solution(0.0)
    report = check_condition_2(prob, alice, DualPoint(x), tol=1e-8)
    assert report.cond15_residual == 0.0
    assert report.condition2


def test_condition_3_reconstructs_scalar_operator(analytic):
    prob, alice, point = analytic
    report = check_condition_3(prob, alice, point.lam, tol=1e-8)
    assert report.condition3
    assert report.anti_hermitian_residual < 1e-12
    # the reconstruction equals the scalar dual operator
    da = prob.shape.dim_a
    from seqdisc.dual import _DualScan

    scan = _DualScan(prob)
    sig = scan.sigma(np.asarray(point.lam))
    x_rec = sum(sig[i] @ w.mat for i, w in alice.support)
    trx = trine.dual_solution(0.25)[1]
    assert np.abs(x_rec - (trx / 2.0) * np.eye(da)).max() < 1e-12


def test_condition_3_fails_with_zero_multiplier(analytic):
    # the constraint is active at the optimum, so a vanishing multiplier
    # cannot certify: over a family rich enough to contain better
    # unconstrained measurements, the reconstructed operator fails dominance
    _, alice, _ = analytic
    prob = trine.inconclusive_problem(0.25, theta_steps=12, alpha_steps=4)
    eta = __import__("seqdisc").constraint_values(prob, alice)
    assert abs(eta[0]) < 1e-10  # active constraint
    report = check_condition_3(prob, alice, (0.0,), tol=1e-8)
    assert not report.condition3
    assert report.cond16_margin < -1e-4
    # with the optimal multiplier the same candidate certifies
    lam_star = trine.dual_solution(0.25)[0]
    assert check_condition_3(prob, alice, (lam_star,), tol=1e-8).condition3


def test_condition_3_trivial_when_objectives_equal():
    rng = np.random.default_rng(41)
    fam = ExplicitBobFamily([random_povm(rng, 2, 3) for _ in range(4)])
    shared = Operator(np.eye(4) / 8.0)
    prob = GeneralizedProblem(BipartiteShape(2, 2), (shared,) * 3, (), (), fam)
    for _ in range(3):
        alice = random_alice(rng, fam)
        report = check_condition_3(prob, alice, (), tol=1e-8)
        assert report.condition3


def test_duality_gap_values(analytic):
    prob, alice, point = analytic
    assert duality_gap(prob, alice, point) == pytest.approx(0.0, abs=1e-9)
    bigger = DualPoint(point.x + 0.5 * identity(2), point.lam)
    assert duality_gap(prob, alice, bigger) == pytest.approx(1.0, abs=1e-9)


def test_duality_gap_nonnegative_for_random_feasible(analytic):
    prob, _, point = analytic
    rng = np.random.default_rng(43)
    fam = prob.family
    for _ in range(10):
        alice = random_alice(rng, fam, count=3)
        if (__import__("seqdisc").constraint_values(prob, alice) <= 0).all():
            assert duality_gap(prob, alice, point) >= -1e-9


def test_duality_gap_flags_infeasible(analytic):
    prob, alice, point = analytic
    bad_dual = DualPoint(Operator(np.zeros((2, 2))), point.lam)
    with pytest.raises(InfeasibleCandidateError):
        duality_gap(prob, alice, bad_dual)
    rng = np.random.default_rng(44)
    for _ in range(20):
        alice_rand = random_alice(rng, prob.family, count=2)
        eta = __import__("seqdisc").constraint_values(prob, alice_rand)
        if (eta > 1e-4).any():
            with pytest.raises(InfeasibleCandidateError):
                duality_gap(prob, alice_rand, point)
            break
    else:
        pytest.skip("no infeasible random measure found")


def test_outcome_bound(analytic):
    prob, alice, _ = analytic
    assert check_outcome_bound(alice, prob)  # 3 <= 8
    fam9 = trine.grid_family(theta_steps=9, alpha_steps=3)
    prob9 = trine.inconclusive_problem(0.25, family=fam9)
    rng = np.random.default_rng(45)
    weights = [np.eye(2) / 9.0] * 9
    nine = AliceMeasure(
        [(i, 2.0 * w / 9.0 * 4.5) for i, w in enumerate(weights)], family=fam9
    )
    assert not check_outcome_bound(nine, prob9)  # 9 > 8
    # boundary: no constraints, four outcomes on a two-level system
    states = trine.trine_states()[0]
    prob_j0 = GeneralizedProblem(
        BipartiteShape(2, 2),
        tuple(states) + (Operator(np.zeros((4, 4))),),
        (),
        (),
        fam9,
    )
    four = AliceMeasure(
        [(i, np.eye(2) / 4.0) for i in range(4)], family=fam9
    )
    assert check_outcome_bound(four, prob_j0)  # 4 <= 4


def test_certificate_equivalence_and_sensitivity(analytic):
    prob, alice, point = analytic
    full = certify(prob, alice, point, tol=1e-7)
    assert full.optimal and full.condition2 and full.condition3
    assert abs(full.gap) < 1e-9
    # residual grows continuously with the perturbation size
    last = 0.0
    for angle in (1e-4, 1e-3, 1e-2, 1e-1):
        alice2, fam2 = perturbed_measurement(angle=angle)
        prob2 = trine.inconclusive_problem(0.25, family=fam2)
        report = check_condition_2(prob2, alice2, point, tol=1e-7)
        assert report.cond14_residual > last
        last = report.cond14_residual


def test_solved_instances_certify(analytic):
    rng = np.random.default_rng(47)
    prob = random_instance(rng)
    point, report = solve_dual(prob, SolverConfig(eps_gap=1e-6))
    cert = certify(prob, report.alice, point, tol=1e-7)
    assert cert.optimal and cert.condition2 and cert.condition3
    assert cert.gap <= 1e-6

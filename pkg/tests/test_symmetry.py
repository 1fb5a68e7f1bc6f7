import numpy as np
import pytest

from seqdisc import (
    AliceMeasure,
    BipartiteShape,
    DualPoint,
    ExplicitBobFamily,
    GeneralizedProblem,
    GroupAction,
    Operator,
    SymmetryError,
    act,
    assemble_sequential,
    certify_scalar_x,
    check_problem_symmetry,
    constraint_values,
    objective,
    symmetrize_alice,
    symmetrize_dual,
    validate_family_action,
)
from seqdisc import trine

from helpers import random_alice, random_hermitian, random_psd


@pytest.fixture(scope="module")
def trine_setup():
    alice, fam, _ = trine.optimal_measurement(0.25)
    prob = trine.inconclusive_problem(0.25, family=fam)
    group = trine.trine_group(fam, m_outcomes=4, j_constraints=1)
    return prob, alice, fam, group


def trivial_group(dim=2):
    return GroupAction(
        names=("e",),
        compose=((0,),),
        inverse=(0,),
        perm_m=((0, 1, 2, 3),),
        perm_j=((0,),),
        rep_a=((np.eye(dim, dtype=complex), False),),
        rep_b=((np.eye(dim, dtype=complex), False),),
        omega_map=lambda g, i: i,
    )


def phase_group():
    u = np.diag([1.0, 1j])
    mats = [np.linalg.matrix_power(u, k) for k in range(4)]
    compose = tuple(tuple((a + b) % 4 for b in range(4)) for a in range(4))
    return GroupAction(
        names=("e", "s", "ss", "sss"),
        compose=compose,
        inverse=(0, 3, 2, 1),
        perm_m=((0,),) * 4,
        perm_j=((),) * 4,
        rep_a=tuple((m, False) for m in mats),
        rep_b=((np.eye(2, dtype=complex), False),) * 4,
        omega_map=lambda g, i: i,
    )


def test_group_table_validation():
    with pytest.raises(SymmetryError):
        GroupAction(
            names=("e", "g"),
            compose=((0, 1), (1, 1)),  # not a group
            inverse=(0, 1),
            perm_m=((0,), (0,)),
            perm_j=((), ()),
            rep_a=((np.eye(2, dtype=complex), False),) * 2,
            rep_b=((np.eye(2, dtype=complex), False),) * 2,
            omega_map=lambda g, i: i,
        )


def test_act_identity_and_rotation(trine_setup):
    prob, _, fam, group = trine_setup
    states = trine.trine_states()[0]
    for m in range(3):
        assert np.abs(act(group, "e", states[m]).mat - states[m].mat).max() < 1e-14
    moved = act(group, "r", states[1], "joint")
    assert np.abs(moved.mat - states[2].mat).max() < 1e-12


def test_act_preserves_trace_and_psd(trine_setup):
    _, _, _, group = trine_setup
    rng = np.random.default_rng(51)
    for g in ("r", "c", "rrc"):
        q = random_psd(rng, 4)
        moved = act(group, g, q, "joint")
        assert moved.trace() == pytest.approx(q.trace(), abs=1e-12)
        assert np.linalg.eigvalsh(moved.mat)[0] > -1e-12


def test_family_action_validates(trine_setup):
    _, _, fam, group = trine_setup
    validate_family_action(group, fam)
    grid = trine.grid_family(theta_steps=12, alpha_steps=3)
    grid_group = trine.trine_group(grid, m_outcomes=4, j_constraints=1)
    validate_family_action(grid_group, grid)
    with pytest.raises(SymmetryError):
        trine.trine_group(
            trine.grid_family(theta_steps=10, alpha_steps=3), m_outcomes=4
        )  # theta steps not divisible by 3


def test_problem_symmetry(trine_setup):
    prob, _, fam, group = trine_setup
    assert check_problem_symmetry(group, prob)
    broken = GeneralizedProblem(
        prob.shape,
        (Operator(np.zeros((4, 4))),) + prob.c[1:],
        prob.a,
        prob.b,
        fam,
    )
    assert not check_problem_symmetry(group, broken)


def test_symmetrize_alice_fixed_point(trine_setup):
    prob, alice, fam, group = trine_setup
    averaged = symmetrize_alice(group, alice)
    assert averaged.ids == alice.ids
    for (i, w), (j, v) in zip(alice.support, averaged.support):
        assert i == j
        assert np.abs(w.mat - v.mat).max() < 1e-12


def test_symmetrize_alice_orbit_average(trine_setup):
    prob, _, fam, group = trine_setup
    phi = AliceMeasure([(0, np.eye(2))], family=fam)
    averaged = symmetrize_alice(group, phi)
    assert len(averaged) == 3
    assert objective(prob, averaged) == pytest.approx(objective(prob, phi), abs=1e-10)
    # covariance: moving a weight by g matches looking up the moved index
    for g in range(len(group)):
        for idx, w in averaged.support:
            target = group.omega_map(g, idx)
            moved = act(group, g, w, "A")
            partner = dict(averaged.support)[target]
            assert np.abs(moved.mat - partner.mat).max() < 1e-10


def test_symmetrize_alice_objective_preserved_random(trine_setup):
    prob, _, fam, group = trine_setup
    rng = np.random.default_rng(53)
    for _ in range(10):
        phi = random_alice(rng, fam, count=2)
        averaged = symmetrize_alice(group, phi)
        assert objective(prob, averaged) == pytest.approx(
            objective(prob, phi), abs=1e-10
        )


def test_symmetrized_joint_measurement_is_covariant(trine_setup):
    prob, _, fam, group = trine_setup
    rng = np.random.default_rng(57)
    phi = random_alice(rng, fam, count=2)
    averaged = symmetrize_alice(group, phi)
    seq = assemble_sequential(averaged, fam)
    for g in range(len(group)):
        perm = group.perm_m[g]
        for m in range(4):
            moved = act(group, g, Operator(seq.joint.array[m], hermitian_tol=1e-8))
            assert np.abs(moved.mat - seq.joint.array[perm[m]]).max() < 1e-9


def test_symmetrize_alice_idempotent(trine_setup):
    prob, _, fam, group = trine_setup
    rng = np.random.default_rng(59)
    phi = random_alice(rng, fam, count=3)
    once = symmetrize_alice(group, phi)
    twice = symmetrize_alice(group, once)
    lookup = dict(once.support)
    assert sorted(twice.ids) == sorted(once.ids)
    for idx, w in twice.support:
        assert np.abs(w.mat - lookup[idx].mat).max() < 1e-12


def test_symmetrize_alice_trivial_group(trine_setup):
    prob, alice, fam, _ = trine_setup
    group1 = trivial_group()
    averaged = symmetrize_alice(group1, alice, family=fam)
    for (i, w), (j, v) in zip(alice.support, averaged.support):
        assert i == j and np.abs(w.mat - v.mat).max() == 0.0


def test_symmetrize_alice_feasibility_preserved(trine_setup):
    prob, _, fam, group = trine_setup
    rng = np.random.default_rng(61)
    for _ in range(10):
        phi = random_alice(rng, fam, count=3)
        eta = constraint_values(prob, phi)
        eta_avg = constraint_values(prob, symmetrize_alice(group, phi))
        assert eta_avg[0] <= eta.max() + 1e-10


def test_symmetrize_dual_irreducible_average(trine_setup):
    _, _, _, group = trine_setup
    y = DualPoint(Operator(np.diag([0.9, 1.0])), (0.5,))
    averaged = symmetrize_dual(group, y)
    assert np.abs(averaged.x.mat - 0.95 * np.eye(2)).max() < 1e-12
    assert averaged.lam[0] == pytest.approx(0.5)


def test_symmetrize_dual_preserves_value_and_margin(trine_setup):
    prob, _, fam, group = trine_setup
    from seqdisc import dual_objective, feasibility_margin

    lam_star, _, x_star = trine.dual_solution(0.25)
    rng = np.random.default_rng(63)
    bump = random_psd(rng, 2, scale=0.1)
    y = DualPoint(x_star + bump, (lam_star,))
    averaged = symmetrize_dual(group, y)
    assert dual_objective(prob, averaged) == pytest.approx(
        dual_objective(prob, y), abs=1e-12
    )
    m_in, _, _ = feasibility_margin(prob, y)
    m_out, _, _ = feasibility_margin(prob, averaged)
    assert m_out >= m_in - 1e-10
    # the already-invariant point is a fixed point
    fixed = symmetrize_dual(group, DualPoint(x_star, (lam_star,)))
    assert np.abs(fixed.x.mat - x_star.mat).max() < 1e-14


def test_certify_scalar_x_cases(trine_setup):
    _, _, _, group = trine_setup
    assert certify_scalar_x(group)
    assert not certify_scalar_x(trivial_group())
    assert not certify_scalar_x(phase_group())

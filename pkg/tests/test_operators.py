import numpy as np
import pytest

from seqdisc import (
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
from seqdisc.operators import (
    DimensionMismatchError,
    HermiticityError,
    NonUnitaryError,
)
from seqdisc import trine

from helpers import random_density, random_hermitian, random_unitary

ROOT3 = np.sqrt(3.0)


def test_operator_rejects_non_hermitian():
    with pytest.raises(HermiticityError):
        Operator([[0.0, 1.0], [0.0, 0.0]])


def test_operator_symmetrizes_small_drift():
    q = Operator([[1.0, 1e-12j], [0.0, 2.0]])
    assert np.abs(q.mat - q.mat.conj().T).max() == 0.0


def test_operator_rejects_non_square():
    with pytest.raises(DimensionMismatchError):
        Operator(np.zeros((2, 3)))


def test_tensor_identities():
    assert np.allclose(tensor(identity(2), identity(2)).mat, np.eye(4))
    a = Operator(np.diag([1.0, 0.0]))
    b = Operator(np.diag([0.0, 1.0]))
    assert np.allclose(tensor(a, b).mat, np.diag([0.0, 1.0, 0.0, 0.0]))


def test_tensor_of_local_projectors_is_joint_projector():
    phi0 = np.array([1.0, 0.0])
    joint = tensor(projector(phi0), projector(phi0))
    assert np.allclose(joint.mat, projector(np.kron(phi0, phi0)).mat)


def test_partial_trace_product_factorizes():
    rng = np.random.default_rng(7)
    shape = BipartiteShape(2, 3)
    for _ in range(20):
        a = random_hermitian(rng, 2)
        b = random_hermitian(rng, 3)
        out = partial_trace_b(tensor(a, b), shape)
        assert np.abs(out.mat - b.trace() * a.mat).max() < 1e-12


def test_partial_trace_cases():
    phi0 = np.array([1.0, 0.0])
    shape = BipartiteShape(2, 2)
    psi = projector(np.kron(phi0, phi0))
    assert np.allclose(partial_trace_b(psi, shape).mat, projector(phi0).mat)
    assert np.allclose(partial_trace_b(identity(4), shape).mat, 2 * np.eye(2))
    with pytest.raises(DimensionMismatchError):
        partial_trace_b(identity(6), shape)


def test_partial_trace_preserves_trace():
    rng = np.random.default_rng(3)
    shape = BipartiteShape(3, 2)
    q = random_hermitian(rng, 6)
    assert abs(partial_trace_b(q, shape).trace() - q.trace()) < 1e-12


def test_eig_simple_cases():
    pairs = eig_hermitian(Operator(np.diag([1.0, 2.0])))
    assert pairs[0][0] == pytest.approx(1.0) and pairs[1][0] == pytest.approx(2.0)
    assert np.allclose(np.abs(pairs[0][1]), [1.0, 0.0])
    vals = [v for v, _ in eig_hermitian(Operator([[0, 1], [1, 0]]))]
    assert vals == pytest.approx([-1.0, 1.0])


def test_eig_sigma_at_template_matches_closed_form():
    # independent oracle: the trine-weighted rank-one expansion of the dual
    # constraint operator, assembled directly from the template overlaps
    lam = 0.5 + 0.5 / ROOT3
    bob = trine.bob_template(0.0)
    phi, _ = trine.trine_vectors()
    sigma = np.zeros((2, 2))
    for m in range(3):
        l_m = float(phi[m] @ (bob.array[m] + lam * bob.array[3]).real @ phi[m]) / 3.0
        sigma += l_m * np.outer(phi[m], phi[m])
    top = eig_hermitian(Operator(sigma))[-1][0]
    assert top == pytest.approx((2.0 + ROOT3) / 8.0, abs=1e-12)
    assert top == pytest.approx(0.466506, abs=1e-6)
    assert top == pytest.approx(trine.dual_solution(0.0)[1] / 2.0, abs=1e-12)


def test_eig_orthonormality_and_reconstruction():
    rng = np.random.default_rng(11)
    worst_orth, worst_rec = 0.0, 0.0
    for _ in range(1000):
        dim = int(rng.integers(2, 9))
        q = random_hermitian(rng, dim)
        pairs = eig_hermitian(q)
        vecs = np.stack([v for _, v in pairs], axis=1)
        worst_orth = max(
            worst_orth, float(np.abs(vecs.conj().T @ vecs - np.eye(dim)).max())
        )
        rec = sum(val * np.outer(v, v.conj()) for val, v in pairs)
        worst_rec = max(
            worst_rec,
            float(np.linalg.norm(rec - q.mat) / max(np.linalg.norm(q.mat), 1e-30)),
        )
    assert worst_orth < 1e-10
    assert worst_rec < 1e-9


def test_is_psd_cases():
    assert is_psd(Operator(np.zeros((2, 2))), 1e-9)
    assert not is_psd(Operator(np.diag([1.0, -1e-3])), 1e-9)


def test_is_psd_dual_slack_at_kernel_point():
    lam, _, x = trine.dual_solution(0.25)
    _, fam, _ = trine.optimal_measurement(0.25)
    from seqdisc import dual_constraint_operator

    prob = trine.inconclusive_problem(0.25, family=fam)
    slack = x - dual_constraint_operator(prob, [lam], 0)
    assert is_psd(slack, 1e-9)
    vals = np.linalg.eigvalsh(slack.mat)
    assert abs(vals[0]) < 1e-12 and vals[1] > 0.1  # rank-one kernel


def test_conjugate_identity_and_antiunitary():
    rng = np.random.default_rng(5)
    q = random_hermitian(rng, 3)
    assert np.allclose(conjugate(np.eye(3), q).mat, q.mat)
    assert np.allclose(conjugate(np.eye(3), q, antiunitary=True).mat, q.mat.conj())


def test_conjugate_rotates_trine_index():
    phi, _ = trine.trine_vectors()
    moved = conjugate(trine.TRINE_ROTATION, projector(phi[1]))
    assert np.abs(moved.mat - projector(phi[2]).mat).max() < 1e-12


def test_conjugate_rejects_non_unitary():
    with pytest.raises(NonUnitaryError):
        conjugate(np.diag([1.0, 2.0]), identity(2))


def test_conjugate_preserves_spectrum():
    rng = np.random.default_rng(9)
    for anti in (False, True):
        for _ in range(25):
            q = random_hermitian(rng, 4)
            u = random_unitary(rng, 4)
            before = np.linalg.eigvalsh(q.mat)
            after = np.linalg.eigvalsh(conjugate(u, q, antiunitary=anti).mat)
            assert np.abs(before - after).max() < 1e-10


def test_tensor_bilinearity_and_trace():
    rng = np.random.default_rng(13)
    for _ in range(20):
        a, a2 = random_hermitian(rng, 2), random_hermitian(rng, 2)
        b = random_hermitian(rng, 3)
        lhs = tensor(a + 2.0 * a2, b).mat
        rhs = tensor(a, b).mat + 2.0 * tensor(a2, b).mat
        assert np.abs(lhs - rhs).max() < 1e-12
        assert tensor(a, b).trace() == pytest.approx(a.trace() * b.trace(), abs=1e-12)


def test_shape_validation():
    with pytest.raises(DimensionMismatchError):
        BipartiteShape(0, 2)
    assert BipartiteShape(2, 3).dim == 6


def test_density_states_have_unit_trace():
    rng = np.random.default_rng(17)
    rho = random_density(rng, 4)
    assert rho.trace() == pytest.approx(1.0)

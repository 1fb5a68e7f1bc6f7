"""Shared random generators and small problem builders for the test suite."""

import numpy as np

from seqdisc import (
    AliceMeasure,
    BipartiteShape,
    ExplicitBobFamily,
    GeneralizedProblem,
    Operator,
    Povm,
)


def random_hermitian(rng, dim, scale=1.0):
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return Operator(scale * (m + m.conj().T) / 2.0, hermitian_tol=np.inf)


def random_psd(rng, dim, scale=1.0):
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return Operator(scale * (m @ m.conj().T) / dim, hermitian_tol=np.inf)


def random_density(rng, dim):
    q = random_psd(rng, dim)
    return Operator(q.mat / q.trace(), hermitian_tol=np.inf)


def random_unitary(rng, dim):
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(m)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_povm(rng, dim, outcomes):
    """Random POVM via symmetric normalization of random PSD elements."""
    elems = [random_psd(rng, dim).mat + 1e-3 * np.eye(dim) for _ in range(outcomes)]
    total = sum(elems)
    vals, vecs = np.linalg.eigh(total)
    corr = (vecs / np.sqrt(vals)) @ vecs.conj().T
    return Povm([corr @ e @ corr for e in elems])


def random_alice(rng, family, count=3):
    """Random feasible Alice measure supported on ``count`` family members."""
    ids = rng.choice(len(family), size=min(count, len(family)), replace=False)
    weights = [random_psd(rng, 2).mat + 1e-3 * np.eye(2) for _ in ids]
    total = sum(weights)
    vals, vecs = np.linalg.eigh(total)
    corr = (vecs / np.sqrt(vals)) @ vecs.conj().T
    return AliceMeasure(
        [(int(i), corr @ w @ corr) for i, w in zip(sorted(ids.tolist()), weights)],
        family=family,
    )


def random_instance(rng, members=5, outcomes=3, with_constraint=True):
    """Random 2x2 (x) 2x2 problem over an explicit Bob family, built so the
    uniform reference measure is strictly feasible."""
    family = ExplicitBobFamily([random_povm(rng, 2, outcomes) for _ in range(members)])
    shape = BipartiteShape(2, 2)
    c = tuple(random_hermitian(rng, 4, scale=0.5) for _ in range(outcomes))
    if not with_constraint:
        return GeneralizedProblem(shape, c, (), (), family)
    a_row = tuple(random_hermitian(rng, 4, scale=0.5) for _ in range(outcomes))
    reference = AliceMeasure(
        [(i, np.eye(2) / members) for i in range(members)], family=family
    )
    level = 0.0
    for i in range(members):
        member = family.member(i)
        for m in range(outcomes):
            level += float(
                np.einsum(
                    "ij,ji->", a_row[m].mat, np.kron(np.eye(2) / members, member[m])
                ).real
            )
    return GeneralizedProblem(shape, c, (a_row,), (level + 0.05,), family)

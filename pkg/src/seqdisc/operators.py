"""Dense Hermitian operator algebra on small (bipartite) Hilbert spaces.

Values are immutable after construction and every operation is a pure
function, so operators can be shared freely between concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "HermiticityError",
    "DimensionMismatchError",
    "NonUnitaryError",
    "Operator",
    "BipartiteShape",
    "identity",
    "projector",
    "tensor",
    "partial_trace_b",
    "eig_hermitian",
    "is_psd",
    "conjugate",
]


class HermiticityError(ValueError):
    """Matrix is further from self-adjoint than the allowed tolerance."""


class DimensionMismatchError(ValueError):
    """Operator dimensions do not line up."""


class NonUnitaryError(ValueError):
    """Conjugating matrix is not unitary."""


class Operator:
    """Square complex self-adjoint matrix with a hermiticity tolerance.

    The input is symmetrized to ``(q + q^dag) / 2`` when its hermiticity
    residual is at most ``hermitian_tol`` and rejected otherwise: small
    floating-point drift from tensor / partial-trace chains is absorbed,
    anything larger is treated as a bug in the caller.
    """

    __slots__ = ("mat",)

    def __init__(self, entries, hermitian_tol: float = 1e-10):
        mat = np.array(entries, dtype=np.complex128)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
            raise DimensionMismatchError(
                f"expected a nonempty square matrix, got shape {mat.shape}"
            )
        residual = float(np.abs(mat - mat.conj().T).max())
        if not residual <= hermitian_tol:
            raise HermiticityError(
                f"hermiticity residual {residual:.3e} exceeds tolerance "
                f"{hermitian_tol:.3e}"
            )
        mat = (mat + mat.conj().T) / 2.0
        mat.setflags(write=False)
        self.mat = mat

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.mat).real)

    def norm(self) -> float:
        """Frobenius norm."""
        return float(np.linalg.norm(self.mat))

    def __add__(self, other: "Operator") -> "Operator":
        return Operator(self.mat + other.mat, hermitian_tol=np.inf)

    def __sub__(self, other: "Operator") -> "Operator":
        return Operator(self.mat - other.mat, hermitian_tol=np.inf)

    def __mul__(self, scalar: float) -> "Operator":
        return Operator(self.mat * float(scalar), hermitian_tol=np.inf)

    __rmul__ = __mul__

    def __neg__(self) -> "Operator":
        return Operator(-self.mat, hermitian_tol=np.inf)

    def __repr__(self) -> str:
        return f"Operator(dim={self.dim})"


@dataclass(frozen=True)
class BipartiteShape:
    """Subsystem dimensions (d_A, d_B) of a joint space H_A (x) H_B."""

    dim_a: int
    dim_b: int

    def __post_init__(self):
        if self.dim_a < 1 or self.dim_b < 1:
            raise DimensionMismatchError("subsystem dimensions must be positive")

    @property
    def dim(self) -> int:
        return self.dim_a * self.dim_b


def identity(dim: int) -> Operator:
    return Operator(np.eye(dim))


def projector(vec) -> Operator:
    """Rank-one operator |v><v| for a (not necessarily normalized) vector."""
    v = np.asarray(vec, dtype=np.complex128).reshape(-1)
    return Operator(np.outer(v, v.conj()), hermitian_tol=np.inf)


def tensor(a: Operator, b: Operator) -> Operator:
    """Kronecker product with row-major (A-index, B-index) convention."""
    return Operator(np.kron(a.mat, b.mat), hermitian_tol=np.inf)


def partial_trace_b(q: Operator, shape: BipartiteShape) -> Operator:
    """Trace out the B subsystem of an operator on H_A (x) H_B."""
    if q.dim != shape.dim:
        raise DimensionMismatchError(
            f"operator dim {q.dim} does not match shape {shape.dim_a}x{shape.dim_b}"
        )
    blocks = q.mat.reshape(shape.dim_a, shape.dim_b, shape.dim_a, shape.dim_b)
    return Operator(np.einsum("ijkj->ik", blocks), hermitian_tol=np.inf)


def eig_hermitian(q: Operator) -> list[tuple[float, np.ndarray]]:
    """Ascending eigenvalues with orthonormal eigenvectors."""
    vals, vecs = np.linalg.eigh(q.mat)
    return [(float(vals[i]), vecs[:, i].copy()) for i in range(q.dim)]


def is_psd(q: Operator, tol: float = 1e-9) -> bool:
    """True iff the smallest eigenvalue is at least -tol."""
    return bool(np.linalg.eigvalsh(q.mat)[0] >= -tol)


def conjugate(u, q: Operator, antiunitary: bool = False) -> Operator:
    """Conjugation u q u^dag; the antiunitary variant conjugates entries first."""
    u = np.asarray(u, dtype=np.complex128)
    if u.shape != (q.dim, q.dim):
        raise DimensionMismatchError(
            f"conjugating matrix shape {u.shape} does not match operator dim {q.dim}"
        )
    residual = float(np.abs(u.conj().T @ u - np.eye(q.dim)).max())
    if residual > 1e-10:
        raise NonUnitaryError(f"unitarity residual {residual:.3e} exceeds 1e-10")
    base = q.mat.conj() if antiunitary else q.mat
    return Operator(u @ base @ u.conj().T, hermitian_tol=np.inf)

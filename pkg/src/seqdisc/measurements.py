"""Bob-side POVMs, parameterized families of them, Alice measures, and the
assembly of joint sequential measurements."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .operators import (
    BipartiteShape,
    DimensionMismatchError,
    Operator,
)

__all__ = [
    "InvalidMeasurementError",
    "PovmReport",
    "validate_povm",
    "Povm",
    "BobFamily",
    "ExplicitBobFamily",
    "QubitRotationGridFamily",
    "ParametricBobFamily",
    "AliceMeasure",
    "SequentialMeasurement",
    "assemble_sequential",
    "outcome_probabilities",
]


class InvalidMeasurementError(ValueError):
    """A POVM or Alice measure violates positivity or normalization."""


@dataclass(frozen=True)
class PovmReport:
    """Validation summary for a candidate POVM."""

    max_psd_violation: float
    completeness_residual: float
    tol: float

    @property
    def passes(self) -> bool:
        return (
            self.max_psd_violation <= self.tol
            and self.completeness_residual <= self.tol
        )


def _elements_array(elements) -> np.ndarray:
    if isinstance(elements, Povm):
        return elements.array
    if isinstance(elements, np.ndarray) and elements.ndim == 3:
        return np.asarray(elements, dtype=np.complex128)
    mats = [e.mat if isinstance(e, Operator) else np.asarray(e, complex) for e in elements]
    return np.stack(mats)


def validate_povm(elements, tol: float = 1e-9) -> PovmReport:
    """Check positivity of each element and completeness of their sum.

    ``elements`` may be a Povm, a sequence of Operators, or an (M, d, d)
    array, so that invalid candidates can be inspected without constructing
    a Povm.
    """
    arr = _elements_array(elements)
    min_eigs = np.linalg.eigvalsh(arr)[:, 0]
    psd_violation = float(max(0.0, -min_eigs.min())) if len(arr) else 0.0
    total = arr.sum(axis=0)
    completeness = float(np.linalg.norm(total - np.eye(arr.shape[1])))
    return PovmReport(psd_violation, completeness, tol)


class Povm:
    """Finite POVM: PSD elements summing to the identity.

    Zero operators are permitted as elements.
    """

    __slots__ = ("elements", "array")

    def __init__(self, elements, psd_tol: float = 1e-9, completeness_tol: float = 1e-9):
        arr = _elements_array(elements)
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.shape[0] == 0:
            raise DimensionMismatchError(f"expected (M, d, d) elements, got {arr.shape}")
        report = validate_povm(arr, tol=max(psd_tol, completeness_tol))
        if report.max_psd_violation > psd_tol:
            raise InvalidMeasurementError(
                f"POVM element PSD violation {report.max_psd_violation:.3e} exceeds {psd_tol:.3e}"
            )
        if report.completeness_residual > completeness_tol:
            raise InvalidMeasurementError(
                f"POVM completeness residual {report.completeness_residual:.3e} "
                f"exceeds {completeness_tol:.3e}"
            )
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self.array = arr
        self.elements = tuple(Operator(m, hermitian_tol=1e-8) for m in arr)

    @property
    def dim(self) -> int:
        return self.array.shape[1]

    @property
    def outcomes(self) -> int:
        return self.array.shape[0]

    def __len__(self) -> int:
        return self.outcomes

    def __getitem__(self, m: int) -> Operator:
        return self.elements[m]

    def __repr__(self) -> str:
        return f"Povm(outcomes={self.outcomes}, dim={self.dim})"


class BobFamily:
    """Indexed family of Bob POVMs, all with the same outcome count.

    Subclasses provide the member POVMs; the base class carries the shared
    machinery for chunked array access and for extending a family with
    explicitly listed extra members.
    """

    outcomes: int
    dim: int

    def __len__(self) -> int:
        raise NotImplementedError

    def member(self, index: int) -> np.ndarray:
        """Raw (M, d, d) array of the member's elements."""
        raise NotImplementedError

    def povm(self, index: int) -> Povm:
        return Povm(self.member(index))

    def label(self, index: int) -> str:
        return f"omega[{index}]"

    def members_array(self, indices) -> np.ndarray:
        """(n, M, d, d) array for a batch of member indices."""
        return np.stack([self.member(int(i)) for i in indices])

    def blocks(self, chunk: int = 16384) -> Iterator[tuple[int, np.ndarray]]:
        n = len(self)
        for start in range(0, n, chunk):
            idx = np.arange(start, min(start + chunk, n))
            yield start, self.members_array(idx)

    def refinement(self, index: int):
        """Hook for continuous local search around a member.

        Returns (x0, lower, upper, build) where ``build`` maps a parameter
        vector to an (M, d, d) member array, or None when the family has no
        continuous parameters.
        """
        return None

    def with_members(self, extra_members: Sequence[np.ndarray], labels=None) -> "BobFamily":
        """New family with explicit members appended after the existing ones."""
        return _ExtendedBobFamily(self, extra_members, labels)


class ExplicitBobFamily(BobFamily):
    """Family given by an explicit list of POVMs."""

    def __init__(self, povms: Sequence, labels: Sequence[str] | None = None):
        arrays = []
        for p in povms:
            arrays.append(p.array if isinstance(p, Povm) else Povm(p).array)
        if not arrays:
            raise InvalidMeasurementError("explicit family needs at least one POVM")
        arr = np.stack(arrays)
        arr.setflags(write=False)
        self._members = arr
        self.outcomes = arr.shape[1]
        self.dim = arr.shape[2]
        self._labels = tuple(labels) if labels is not None else None

    def __len__(self) -> int:
        return self._members.shape[0]

    def member(self, index: int) -> np.ndarray:
        return self._members[index]

    def members_array(self, indices) -> np.ndarray:
        return self._members[np.asarray(indices, dtype=int)]

    def label(self, index: int) -> str:
        if self._labels is not None:
            return self._labels[index]
        return f"omega[{index}]"


class QubitRotationGridFamily(BobFamily):
    """Four-outcome qubit POVMs: rotated, outcome-shifted copies of a
    one-parameter projective-plus-failure template.

    The template has elements {0, |b1><b1|, |b2><b2|, alpha |1><1|} with
    |b1>, |b2> symmetric about |0>; members apply a rotation by theta and a
    cyclic shift of the first three outcome labels.  The shift index is part
    of the grid because the rotated optimal measurements of the symmetric
    problems this family targets carry relabeled outcomes.
    """

    def __init__(
        self,
        theta_steps: int,
        alpha_steps: int,
        alpha_range: tuple[float, float] = (0.0, 1.0),
        shifts: int = 3,
    ):
        if theta_steps < 1 or alpha_steps < 1 or shifts not in (1, 3):
            raise ValueError("theta_steps, alpha_steps must be >= 1 and shifts in {1, 3}")
        lo, hi = float(alpha_range[0]), float(alpha_range[1])
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("alpha_range must satisfy 0 <= lo <= hi <= 1")
        self.theta_steps = int(theta_steps)
        self.alpha_steps = int(alpha_steps)
        self.alpha_lo = lo
        self.alpha_hi = hi
        self.shifts = int(shifts)
        self.outcomes = 4
        self.dim = 2
        self._alphas = (
            np.linspace(lo, hi, alpha_steps) if alpha_steps > 1 else np.array([lo])
        )

    def __len__(self) -> int:
        return self.shifts * self.theta_steps * self.alpha_steps

    def _decode(self, index):
        index = np.asarray(index, dtype=int)
        per_shift = self.theta_steps * self.alpha_steps
        c = index // per_shift
        rem = index % per_shift
        it = rem // self.alpha_steps
        ia = rem % self.alpha_steps
        theta = 2.0 * np.pi * it / self.theta_steps
        return theta, self._alphas[ia], c

    @staticmethod
    def build(theta, alpha, shift) -> np.ndarray:
        """Member arrays for vectors of (theta, alpha, shift); shape (n, 4, 2, 2)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        shift = np.atleast_1d(np.asarray(shift, dtype=int))
        n = theta.shape[0]
        r = np.full(n, np.sqrt(0.5))
        s = np.sqrt(np.clip(1.0 - alpha, 0.0, None) / 2.0)
        vecs = np.zeros((n, 3, 2))
        vecs[:, 0] = 0.0  # dropped outcome of the template
        vecs[:, 1, 0] = r
        vecs[:, 1, 1] = -s
        vecs[:, 2, 0] = r
        vecs[:, 2, 1] = s
        base = np.einsum("nmi,nmj->nmij", vecs, vecs)
        # cyclic relabeling of the first three outcomes
        m_idx = (np.arange(3)[None, :] - shift[:, None]) % 3
        first3 = base[np.arange(n)[:, None], m_idx]
        last = np.zeros((n, 1, 2, 2))
        last[:, 0, 1, 1] = np.clip(alpha, 0.0, None)
        t = np.concatenate([first3, last], axis=1)
        cos, sin = np.cos(theta), np.sin(theta)
        u = np.empty((n, 2, 2))
        u[:, 0, 0] = cos
        u[:, 0, 1] = -sin
        u[:, 1, 0] = sin
        u[:, 1, 1] = cos
        rotated = np.einsum("nij,nmjk,nlk->nmil", u, t, u)
        return rotated.astype(np.complex128)

    def member(self, index: int) -> np.ndarray:
        theta, alpha, c = self._decode([index])
        return self.build(theta, alpha, c)[0]

    def members_array(self, indices) -> np.ndarray:
        theta, alpha, c = self._decode(indices)
        return self.build(theta, alpha, c)

    def label(self, index: int) -> str:
        theta, alpha, c = self._decode([index])
        return f"grid(theta={theta[0]:.6f}, alpha={alpha[0]:.6f}, shift={int(c[0])})"

    def refinement(self, index: int):
        theta, alpha, c = self._decode([index])
        theta, alpha, c = float(theta[0]), float(alpha[0]), int(c[0])
        dtheta = 2.0 * np.pi / self.theta_steps
        dalpha = (
            (self.alpha_hi - self.alpha_lo) / (self.alpha_steps - 1)
            if self.alpha_steps > 1
            else 0.0
        )
        x0 = np.array([theta, alpha])
        lower = np.array([theta - dtheta, max(self.alpha_lo, alpha - dalpha)])
        upper = np.array([theta + dtheta, min(self.alpha_hi, alpha + dalpha)])

        def build(x):
            return self.build([x[0]], [x[1]], [c])[0]

        return x0, lower, upper, build


class ParametricBobFamily(BobFamily):
    """Family generated by a user-supplied pure function of the index.

    Closure of the generated members under any group action used with the
    symmetry tools is the caller's obligation.
    """

    def __init__(
        self,
        count: int,
        outcomes: int,
        dim: int,
        builder: Callable[[int], object],
        labeler: Callable[[int], str] | None = None,
        validate_samples: int = 4,
    ):
        if count < 1:
            raise InvalidMeasurementError("parametric family needs at least one member")
        self._count = int(count)
        self.outcomes = int(outcomes)
        self.dim = int(dim)
        self._builder = builder
        self._labeler = labeler
        for i in np.linspace(0, count - 1, min(validate_samples, count)).astype(int):
            arr = self.member(int(i))
            Povm(arr)  # raises if the generated member is invalid

    def __len__(self) -> int:
        return self._count

    def member(self, index: int) -> np.ndarray:
        out = self._builder(int(index))
        arr = out.array if isinstance(out, Povm) else _elements_array(out)
        if arr.shape != (self.outcomes, self.dim, self.dim):
            raise DimensionMismatchError(
                f"builder returned shape {arr.shape}, expected "
                f"({self.outcomes}, {self.dim}, {self.dim})"
            )
        return arr

    def label(self, index: int) -> str:
        if self._labeler is not None:
            return self._labeler(int(index))
        return f"omega[{index}]"


class _ExtendedBobFamily(BobFamily):
    """Base family plus explicitly appended members (e.g. polished points)."""

    def __init__(self, base: BobFamily, extra_members, labels=None):
        extra = np.stack([_elements_array(m)[...] if np.asarray(m).ndim == 3 else np.asarray(m) for m in extra_members]).astype(np.complex128)
        if extra.shape[1:] != (base.outcomes, base.dim, base.dim):
            raise DimensionMismatchError("extra members do not match the base family")
        self.base = base
        self._extra = extra
        self._extra_labels = tuple(labels) if labels is not None else None
        self.outcomes = base.outcomes
        self.dim = base.dim

    def __len__(self) -> int:
        return len(self.base) + self._extra.shape[0]

    def member(self, index: int) -> np.ndarray:
        n = len(self.base)
        if index < n:
            return self.base.member(index)
        return self._extra[index - n]

    def members_array(self, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=int)
        n = len(self.base)
        out = np.empty((len(indices), self.outcomes, self.dim, self.dim), complex)
        in_base = indices < n
        if in_base.any():
            out[in_base] = self.base.members_array(indices[in_base])
        if (~in_base).any():
            out[~in_base] = self._extra[indices[~in_base] - n]
        return out

    def blocks(self, chunk: int = 16384):
        yield from self.base.blocks(chunk)
        if self._extra.shape[0]:
            yield len(self.base), self._extra

    def label(self, index: int) -> str:
        n = len(self.base)
        if index < n:
            return self.base.label(index)
        if self._extra_labels is not None:
            return self._extra_labels[index - n]
        return f"refined[{index - n}]"

    def refinement(self, index: int):
        if index < len(self.base):
            return self.base.refinement(index)
        return None

    def with_members(self, extra_members, labels=None):
        new_labels = None
        if self._extra_labels is not None or labels is not None:
            old = self._extra_labels or tuple(
                f"refined[{i}]" for i in range(self._extra.shape[0])
            )
            new = tuple(labels) if labels is not None else tuple(
                f"refined[{i}]" for i in range(len(extra_members))
            )
            new_labels = old + new
        members = list(self._extra) + [np.asarray(m) for m in extra_members]
        return _ExtendedBobFamily(self.base, members, new_labels)


class AliceMeasure:
    """Finite-support Alice measure: distinct family indices paired with PSD
    weight operators on H_A that sum to the identity."""

    __slots__ = ("support", "family")

    def __init__(
        self,
        support,
        family: BobFamily | None = None,
        psd_tol: float = 1e-9,
        norm_tol: float = 1e-9,
    ):
        pairs = []
        for idx, w in support:
            op = w if isinstance(w, Operator) else Operator(w)
            pairs.append((int(idx), op))
        if not pairs:
            raise InvalidMeasurementError("Alice measure needs nonempty support")
        ids = [i for i, _ in pairs]
        if len(set(ids)) != len(ids):
            raise InvalidMeasurementError(f"duplicate support indices: {sorted(ids)}")
        dim = pairs[0][1].dim
        total = np.zeros((dim, dim), complex)
        for _, w in pairs:
            if w.dim != dim:
                raise DimensionMismatchError("inconsistent weight dimensions")
            if np.linalg.eigvalsh(w.mat)[0] < -psd_tol:
                raise InvalidMeasurementError("weight operator is not PSD")
            total += w.mat
        residual = float(np.linalg.norm(total - np.eye(dim)))
        if residual > norm_tol:
            raise InvalidMeasurementError(
                f"weights sum to identity with residual {residual:.3e} > {norm_tol:.3e}"
            )
        self.support = tuple(pairs)
        self.family = family

    @property
    def dim(self) -> int:
        return self.support[0][1].dim

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.support)

    def total(self) -> Operator:
        acc = np.zeros((self.dim, self.dim), complex)
        for _, w in self.support:
            acc += w.mat
        return Operator(acc, hermitian_tol=np.inf)

    def __len__(self) -> int:
        return len(self.support)

    def __repr__(self) -> str:
        return f"AliceMeasure(outcomes={len(self.support)}, dim={self.dim})"


@dataclass(frozen=True)
class SequentialMeasurement:
    """Joint POVM assembled from an Alice measure and a Bob family."""

    joint: Povm
    shape: BipartiteShape


def assemble_sequential(alice, family: BobFamily | None = None) -> SequentialMeasurement:
    """Assemble the joint POVM sum_k A_k (x) B_m^(omega_k).

    ``alice`` may be an AliceMeasure or a raw iterable of (index, weight)
    pairs; assembly itself is a pure linear map of the weights, duplicate
    indices are summed, and the result is validated as a POVM.
    """
    if isinstance(alice, AliceMeasure):
        support = alice.support
        family = family if family is not None else alice.family
    else:
        support = [(int(i), w if isinstance(w, Operator) else Operator(w)) for i, w in alice]
    if family is None:
        raise ValueError("a Bob family is required for assembly")
    dim_a = support[0][1].dim
    shape = BipartiteShape(dim_a, family.dim)
    joint = np.zeros((family.outcomes, shape.dim, shape.dim), complex)
    for idx, w in support:
        if not 0 <= idx < len(family):
            raise InvalidMeasurementError(f"unresolved family index {idx}")
        member = family.member(idx)
        for m in range(family.outcomes):
            joint[m] += np.kron(w.mat, member[m])
    return SequentialMeasurement(Povm(joint), shape)


def outcome_probabilities(
    measurement: SequentialMeasurement, weighted_states: Sequence[Operator]
) -> np.ndarray:
    """Matrix P[r, m] = Tr(rho_r Pi_m) of joint outcome probabilities."""
    arr = measurement.joint.array
    out = np.empty((len(weighted_states), arr.shape[0]))
    for r, state in enumerate(weighted_states):
        if state.dim != arr.shape[1]:
            raise DimensionMismatchError("state dimension does not match measurement")
        out[r] = np.einsum("ij,mji->m", state.mat, arr).real
    return out

"""Problem, solution, and dual files.

Documents are JSON with every matrix serialized as a row-major list of
[real, imag] pairs in decimal text; floats round-trip exactly through the
shortest-repr encoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dual import DualPoint
from .measurements import (
    AliceMeasure,
    BobFamily,
    ExplicitBobFamily,
    Povm,
    QubitRotationGridFamily,
)
from .minimax import MinimaxProblem
from .operators import BipartiteShape, Operator
from .problems import EQUALITY, INEQUALITY, GeneralizedProblem
from .symmetry import GroupAction

__all__ = [
    "ParseError",
    "ProblemBundle",
    "matrix_to_pairs",
    "pairs_to_matrix",
    "load_problem",
    "dump_problem",
    "load_solution",
    "dump_solution",
    "load_dual",
    "dump_dual",
]


class ParseError(ValueError):
    """Input document is malformed or inconsistent."""


@dataclass
class ProblemBundle:
    """Everything a problem file can carry."""

    problem: GeneralizedProblem
    group: GroupAction | None = None
    minimax: MinimaxProblem | None = None


def matrix_to_pairs(mat: np.ndarray) -> list[list[float]]:
    flat = np.asarray(mat, dtype=complex).reshape(-1)
    return [[float(z.real), float(z.imag)] for z in flat]


def pairs_to_matrix(pairs, dim: int) -> np.ndarray:
    arr = np.asarray(pairs, dtype=float)
    if arr.shape != (dim * dim, 2):
        raise ParseError(f"expected {dim * dim} (real, imag) pairs, got shape {arr.shape}")
    return (arr[:, 0] + 1j * arr[:, 1]).reshape(dim, dim)


def _operator(pairs, dim: int, what: str) -> Operator:
    try:
        return Operator(pairs_to_matrix(pairs, dim), hermitian_tol=1e-8)
    except ValueError as exc:
        raise ParseError(f"bad {what}: {exc}") from exc


def _family_from_doc(doc, outcomes: int) -> BobFamily:
    mode = doc.get("mode")
    if mode == "explicit-list":
        povms = []
        for entry in doc["povms"]:
            dim = int(round(np.sqrt(len(entry[0]))))
            mats = [pairs_to_matrix(e, dim) for e in entry]
            try:
                povms.append(Povm(mats))
            except ValueError as exc:
                raise ParseError(f"bad POVM in family: {exc}") from exc
        fam = ExplicitBobFamily(povms)
    elif mode == "qubit-rotation-grid":
        fam = QubitRotationGridFamily(
            int(doc["theta_steps"]),
            int(doc["alpha_steps"]),
            tuple(doc.get("alpha_range", (0.0, 1.0))),
        )
    else:
        raise ParseError(f"unknown family mode {mode!r}")
    if fam.outcomes != outcomes:
        raise ParseError(
            f"family outcome count {fam.outcomes} does not match problem outcomes {outcomes}"
        )
    return fam


def _family_to_doc(fam: BobFamily) -> dict:
    if isinstance(fam, QubitRotationGridFamily):
        return {
            "mode": "qubit-rotation-grid",
            "theta_steps": fam.theta_steps,
            "alpha_steps": fam.alpha_steps,
            "alpha_range": [fam.alpha_lo, fam.alpha_hi],
        }
    return {
        "mode": "explicit-list",
        "povms": [
            [matrix_to_pairs(fam.member(i)[m]) for m in range(fam.outcomes)]
            for i in range(len(fam))
        ],
    }


def _group_from_doc(doc, family: BobFamily, problem: GeneralizedProblem | None):
    if doc.get("builtin") == "trine":
        from .trine import trine_group

        return trine_group(
            family,
            m_outcomes=family.outcomes,
            j_constraints=problem.J if problem is not None else 1,
            with_k=bool(doc.get("with_k", False)),
        )
    try:
        names = tuple(doc["elements"])
        omega = tuple(tuple(int(x) for x in row) for row in doc["omega_perm"])

        def omega_map(g: int, i: int) -> int:
            return omega[g][i]

        def rep(entries):
            out = []
            for e in entries:
                dim = int(round(np.sqrt(len(e["matrix"]))))
                out.append((pairs_to_matrix(e["matrix"], dim), bool(e.get("antiunitary", False))))
            return tuple(out)

        return GroupAction(
            names=names,
            compose=tuple(tuple(int(x) for x in row) for row in doc["compose"]),
            inverse=tuple(int(x) for x in doc["inverse"]),
            perm_m=tuple(tuple(int(x) for x in row) for row in doc["perm_m"]),
            perm_j=tuple(tuple(int(x) for x in row) for row in doc["perm_j"]),
            rep_a=rep(doc["rep_a"]),
            rep_b=rep(doc["rep_b"]),
            omega_map=omega_map,
            perm_k=(
                tuple(tuple(int(x) for x in row) for row in doc["perm_k"])
                if "perm_k" in doc
                else None
            ),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad symmetry section: {exc}") from exc


def load_problem(path: str) -> ProblemBundle:
    """Parse a problem file; hermiticity and PSD checks are applied on load."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read problem file {path}: {exc}") from exc
    try:
        shape = BipartiteShape(int(doc["shape"]["dim_a"]), int(doc["shape"]["dim_b"]))
        outcomes = int(doc["outcomes"])
        dim = shape.dim
        c = tuple(_operator(m, dim, "objective operator") for m in doc["objective"])
        if len(c) != outcomes:
            raise ParseError("objective needs one operator per outcome")
        rows, levels, kinds = [], [], []
        for entry in doc.get("constraints", []):
            row = tuple(_operator(m, dim, "constraint operator") for m in entry["a"])
            if len(row) != outcomes:
                raise ParseError("constraint rows need one operator per outcome")
            rows.append(row)
            levels.append(float(entry["b"]))
            kind = entry.get("kind", INEQUALITY)
            if kind not in (INEQUALITY, EQUALITY):
                raise ParseError(f"unknown constraint kind {kind!r}")
            kinds.append(kind)
        family = _family_from_doc(doc["bob_family"], outcomes)
        problem = GeneralizedProblem(
            shape, c, tuple(rows), tuple(levels), family, tuple(kinds)
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad problem file {path}: {exc}") from exc

    minimax = None
    if "minimax" in doc:
        try:
            mm = doc["minimax"]
            c_rows = tuple(
                tuple(_operator(m, dim, "minimax operator") for m in row)
                for row in mm["c"]
            )
            minimax = MinimaxProblem(
                shape=shape,
                c=c_rows,
                d=tuple(float(x) for x in mm["d"]),
                family=family,
                a=tuple(rows),
                b=tuple(levels),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad minimax section: {exc}") from exc

    group = None
    if "symmetry" in doc:
        group = _group_from_doc(doc["symmetry"], family, problem)
    return ProblemBundle(problem, group, minimax)


def dump_problem(bundle: ProblemBundle, path: str, extra: dict | None = None) -> None:
    p = bundle.problem
    doc = {
        "shape": {"dim_a": p.shape.dim_a, "dim_b": p.shape.dim_b},
        "outcomes": p.M,
        "objective": [matrix_to_pairs(op.mat) for op in p.c],
        "constraints": [
            {
                "a": [matrix_to_pairs(op.mat) for op in row],
                "b": level,
                "kind": kind,
            }
            for row, level, kind in zip(p.a, p.b, p.kinds)
        ],
        "bob_family": _family_to_doc(p.family),
    }
    if bundle.minimax is not None:
        doc["minimax"] = {
            "c": [[matrix_to_pairs(op.mat) for op in row] for row in bundle.minimax.c],
            "d": list(bundle.minimax.d),
        }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def dump_solution(alice: AliceMeasure, family: BobFamily, path: str) -> None:
    """Write Alice weights plus the active Bob POVMs, self-contained."""
    doc = {
        "alice": [
            {
                "weight": matrix_to_pairs(w.mat),
                "bob_povm": [
                    matrix_to_pairs(family.member(idx)[m]) for m in range(family.outcomes)
                ],
            }
            for idx, w in alice.support
        ]
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_solution(path: str) -> AliceMeasure:
    """Read a solution file into a measure over an explicit family."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
        entries = doc["alice"]
        dim_a = int(round(np.sqrt(len(entries[0]["weight"]))))
        povms, support = [], []
        for k, entry in enumerate(entries):
            weight = pairs_to_matrix(entry["weight"], dim_a)
            dim_b = int(round(np.sqrt(len(entry["bob_povm"][0]))))
            povms.append(Povm([pairs_to_matrix(e, dim_b) for e in entry["bob_povm"]]))
            support.append((k, Operator(weight, hermitian_tol=1e-8)))
        family = ExplicitBobFamily(povms)
        return AliceMeasure(support, family=family, psd_tol=1e-7, norm_tol=1e-6)
    except (OSError, json.JSONDecodeError, KeyError, IndexError, ValueError) as exc:
        raise ParseError(f"cannot read solution file {path}: {exc}") from exc


def dump_dual(point: DualPoint, path: str, report: dict | None = None) -> None:
    doc = {"x": matrix_to_pairs(point.x.mat), "lambda": list(point.lam)}
    if report:
        doc["report"] = report
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_dual(path: str) -> DualPoint:
    try:
        with open(path) as fh:
            doc = json.load(fh)
        dim = int(round(np.sqrt(len(doc["x"]))))
        x = Operator(pairs_to_matrix(doc["x"], dim), hermitian_tol=1e-8)
        return DualPoint(x, tuple(float(v) for v in doc["lambda"]))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ParseError(f"cannot read dual file {path}: {exc}") from exc

"""Batch command-line front end: solve, certify, minimax, and the trine
sweep with CSV (and optional figure) output.

Exit codes: 0 success, 1 certificate failure, 2 parse error, 3 solver
nonconvergence, 4 primal infeasible.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import trine
from .certificates import certify
from .dual import (
    NonconvergenceError,
    PrimalInfeasibleError,
    SolveError,
    SolverConfig,
    solve_dual,
    solve_global_dual,
)
from .minimax import MinimaxConfig, check_saddle, solve_minimax, symmetrize_minimax
from .problems import constraint_values, expand_equalities
from .serialize import (
    ParseError,
    dump_dual,
    dump_solution,
    load_dual,
    load_problem,
    load_solution,
)
from .symmetry import SymmetryError, certify_scalar_x

EXIT_OK = 0
EXIT_CERT_FAIL = 1
EXIT_PARSE = 2
EXIT_NONCONVERGED = 3
EXIT_INFEASIBLE = 4


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _worker_count() -> int:
    env = os.environ.get("SEQDISC_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--eps-gap", type=float, default=1e-4)
    parser.add_argument("--eps-feas", type=float, default=1e-7)
    parser.add_argument("--max-iters", type=int, default=300)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--grid-theta", type=int, default=None,
                        help="override theta steps of a grid family")
    parser.add_argument("--grid-alpha", type=int, default=None,
                        help="override alpha steps of a grid family")
    parser.add_argument("--scalar-x", choices=("auto", "on", "off"), default="auto",
                        help="scalar fast path: certified by symmetry when auto")


def _config(args, scalar: bool) -> SolverConfig:
    return SolverConfig(
        eps_feas=args.eps_feas,
        eps_gap=args.eps_gap,
        max_iters=args.max_iters,
        seed=args.seed,
        scalar_x_fast_path=scalar,
    )


def _apply_grid_override(bundle, args):
    fam = bundle.problem.family
    if args.grid_theta is None and args.grid_alpha is None:
        return bundle
    if not isinstance(fam, trine.QubitRotationGridFamily):
        print("warning: grid flags ignored for a non-grid family", file=sys.stderr)
        return bundle
    new_fam = trine.QubitRotationGridFamily(
        args.grid_theta or fam.theta_steps,
        args.grid_alpha or fam.alpha_steps,
        (fam.alpha_lo, fam.alpha_hi),
    )
    bundle.problem = bundle.problem.with_family(new_fam)
    if bundle.group is not None:
        bundle.group = trine.trine_group(
            new_fam, m_outcomes=bundle.problem.M, j_constraints=bundle.problem.J
        )
    return bundle


def _resolve_scalar(args, bundle) -> bool:
    if args.scalar_x == "on":
        return True
    if args.scalar_x == "off":
        return False
    if bundle.group is None:
        return False
    try:
        return certify_scalar_x(bundle.group)
    except SymmetryError:
        return False


def cmd_solve(args) -> int:
    try:
        bundle = load_problem(args.problem)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    bundle = _apply_grid_override(bundle, args)
    problem = expand_equalities(bundle.problem)
    cfg = _config(args, _resolve_scalar(args, bundle))
    try:
        point, report = solve_dual(problem, cfg)
    except PrimalInfeasibleError as exc:
        print(f"primal infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NonconvergenceError, SolveError) as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    slacks = constraint_values(problem, report.alice)
    print(f"dual value      {_fmt(report.dual_value)}")
    print(f"primal value    {_fmt(report.primal_value)}")
    print(f"gap             {_fmt(report.gap)}")
    print(f"alice outcomes  {len(report.alice)}")
    print(f"iterations      {report.iterations}")
    print(f"margin (grid)   {_fmt(report.feasibility_margin)}")
    for j, s in enumerate(slacks):
        print(f"constraint[{j}] slack {_fmt(s)}")
    if args.solution_out:
        dump_solution(report.alice, report.family, args.solution_out)
    if args.out:
        dump_dual(
            point,
            args.out,
            report={
                "dual_value": report.dual_value,
                "primal_value": report.primal_value,
                "gap": report.gap,
                "iterations": report.iterations,
            },
        )
    return EXIT_OK if report.gap <= args.eps_gap else EXIT_NONCONVERGED


def cmd_certify(args) -> int:
    try:
        bundle = load_problem(args.problem)
        alice = load_solution(args.solution)
        point = load_dual(args.dual)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    problem = expand_equalities(bundle.problem)
    if point.x.dim != problem.shape.dim_a or len(point.lam) != problem.J:
        print("parse error: dual point does not match the problem dimensions", file=sys.stderr)
        return EXIT_PARSE
    if alice.dim != problem.shape.dim_a or alice.family.dim != problem.shape.dim_b:
        print("parse error: solution does not match the problem dimensions", file=sys.stderr)
        return EXIT_PARSE
    report = certify(problem, alice, point, tol=args.tol)
    print(f"kernel-alignment residual   {_fmt(report.cond14_residual)}")
    print(f"slackness residual          {_fmt(report.cond15_residual)}")
    print(f"dual margin                 {_fmt(report.dual_margin)}")
    print(f"reconstructed margin        {_fmt(report.cond16_margin)}")
    print(f"anti-hermitian residual     {_fmt(report.anti_hermitian_residual)}")
    print(f"gap                         {'n/a' if report.gap is None else _fmt(report.gap)}")
    print(f"condition (kernel+slack)    {'pass' if report.condition2 else 'FAIL'}")
    print(f"condition (dominance)       {'pass' if report.condition3 else 'FAIL'}")
    print(f"verdict                     {'optimal' if report.optimal else 'NOT CERTIFIED'}")
    return EXIT_OK if report.optimal else EXIT_CERT_FAIL


def _sweep_row(p_i: float, args) -> dict:
    lam_star, _, _ = trine.dual_solution(p_i)
    analytic = trine.success_probability(p_i)
    problem = trine.inconclusive_problem(
        p_i,
        theta_steps=args.grid_theta or 360,
        alpha_steps=args.grid_alpha or 34,
    )
    cfg = _config(args, True)
    _, report = solve_dual(problem, cfg)
    _, _, global_value = solve_global_dual(
        problem.M, problem.c, problem.a, problem.b, _config(args, False)
    )
    return {
        "p_I": p_i,
        "P_S_analytic": analytic,
        "P_S_numeric_sequential": report.primal_value,
        "P_S_numeric_global": global_value,
        "lambda_star": lam_star,
        "gap_sequential": report.gap,
    }


_SWEEP_COLUMNS = (
    "p_I",
    "P_S_analytic",
    "P_S_numeric_sequential",
    "P_S_numeric_global",
    "lambda_star",
    "gap_sequential",
)


def cmd_trine_sweep(args) -> int:
    if not (0.0 <= args.pi_min <= args.pi_max <= 0.5):
        print("parse error: need 0 <= pi-min <= pi-max <= 0.5", file=sys.stderr)
        return EXIT_PARSE
    if args.steps < 1:
        print("parse error: need at least one step", file=sys.stderr)
        return EXIT_PARSE
    points = (
        np.linspace(args.pi_min, args.pi_max, args.steps)
        if args.steps > 1
        else np.array([args.pi_min])
    )
    try:
        with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
            rows = list(pool.map(lambda p: _sweep_row(float(p), args), points))
    except PrimalInfeasibleError as exc:
        print(f"primal infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NonconvergenceError, SolveError) as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    lines = [",".join(_SWEEP_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row[col]) for col in _SWEEP_COLUMNS))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.plot:
        _render_sweep_plot(rows, args.plot)
    return EXIT_OK


def _render_sweep_plot(rows, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    p = [r["p_I"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(p, [r["P_S_analytic"] for r in rows], "-", label="sequential (closed form)")
    ax.plot(p, [r["P_S_numeric_sequential"] for r in rows], "o", ms=4,
            label="sequential (numeric)")
    ax.plot(p, [r["P_S_numeric_global"] for r in rows], "s--", ms=4,
            label="global (numeric)")
    ax.set_xlabel("inconclusive probability")
    ax.set_ylabel("success probability")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def cmd_minimax(args) -> int:
    try:
        bundle = load_problem(args.problem)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if bundle.minimax is None:
        print("parse error: problem file has no minimax section", file=sys.stderr)
        return EXIT_PARSE
    cfg = _config(args, False)
    outer = MinimaxConfig(tol=max(args.eps_gap, 1e-6))
    try:
        result = solve_minimax(bundle.minimax, cfg, outer)
    except PrimalInfeasibleError as exc:
        print(f"primal infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NonconvergenceError, SolveError) as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    saddle = check_saddle(bundle.minimax, result.mu, result.alice, tol=10 * outer.tol, cfg=cfg)
    print("mu* " + " ".join(_fmt(v) for v in result.mu.mu))
    print(f"value           {_fmt(result.value)}")
    print(f"outer iterations {result.iterations}")
    print(f"saddle response gap    {_fmt(saddle.response_gap)}")
    print(f"saddle guarantee slack {_fmt(saddle.worst_guarantee_slack)}")
    print(f"saddle support slack   {_fmt(saddle.worst_support_slack)}")
    print(f"saddle check            {'pass' if saddle.passed else 'FAIL'}")
    if bundle.group is not None:
        try:
            mu_sym, alice_sym = symmetrize_minimax(
                bundle.group, bundle.minimax, result.mu, result.alice
            )
            print("mu* (symmetrized) " + " ".join(_fmt(v) for v in mu_sym.mu))
        except SymmetryError as exc:
            print(f"symmetrization skipped: {exc}", file=sys.stderr)
    if args.solution_out:
        dump_solution(result.alice, result.alice.family or bundle.minimax.family,
                      args.solution_out)
    return EXIT_OK if saddle.passed else EXIT_NONCONVERGED


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="seqdisc",
        description="Generalized state discrimination with sequential measurements",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a problem file")
    p_solve.add_argument("problem")
    _add_solver_flags(p_solve)
    p_solve.add_argument("--out", default=None, help="write the dual point (JSON)")
    p_solve.add_argument("--solution-out", default=None,
                         help="write the extracted measurement (JSON)")
    p_solve.set_defaults(func=cmd_solve)

    p_cert = sub.add_parser("certify", help="verify optimality of candidate files")
    p_cert.add_argument("problem")
    p_cert.add_argument("solution")
    p_cert.add_argument("dual")
    p_cert.add_argument("--tol", type=float, default=1e-7)
    p_cert.set_defaults(func=cmd_certify)

    p_sweep = sub.add_parser("trine-sweep", help="sweep the double-trine curve")
    p_sweep.add_argument("--pi-min", type=float, default=0.0)
    p_sweep.add_argument("--pi-max", type=float, default=0.5)
    p_sweep.add_argument("--steps", type=int, default=11)
    _add_solver_flags(p_sweep)
    p_sweep.add_argument("--out", default=None, help="CSV output path (stdout if absent)")
    p_sweep.add_argument("--plot", default=None,
                         help="also render the sweep to this image file")
    p_sweep.set_defaults(func=cmd_trine_sweep)

    p_mm = sub.add_parser("minimax", help="solve the minimax section of a problem file")
    p_mm.add_argument("problem")
    _add_solver_flags(p_mm)
    p_mm.add_argument("--solution-out", default=None)
    p_mm.set_defaults(func=cmd_minimax)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

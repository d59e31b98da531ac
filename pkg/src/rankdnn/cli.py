"""Command-line front end.

Subcommands: solve one instance file, sweep the penalty weight into a CSV,
run a benchmark manifest into a table, or verify the solver against the
brute-force references on seeded random instances.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import io as instance_io
from .dca import (
    STATUS_STATIONARY,
    DcaConfig,
    bisect_rho,
    run_dca,
)
from .errors import RankDnnError
from .extract import compute_gap, round_solution, round_to_permutation
from .inner import InnerConfig
from .linalg import eig
from .model import TOL_RANK, build_qap, build_tripartition, lift_solution
from .oracle import qap_brute_force, tripartition_brute_force
from .penalty import PenaltyParams

DEFAULT_RHO_LO = 0.0625
DEFAULT_RHO_HI = 1.0
DEFAULT_ROUNDS = 8
SCHEMA_VERSION = 1


def format_hhmmss(seconds: float) -> str:
    total = int(round(seconds))
    return f"{total // 3600:02d}:{total % 3600 // 60:02d}:{total % 60:02d}"


def _apply_thread_limit(threads: int | None) -> None:
    """Best-effort BLAS thread cap; honored fully by pools created after
    this call."""
    if threads is None:
        env = os.environ.get("RANKDNN_THREADS")
        if not env:
            return
        threads = int(env)
    value = str(max(1, threads))
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = value
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=int(value))
    except ImportError:
        pass


def _solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--rho", type=float, default=None,
                        help="fixed penalty weight; omit to search")
    parser.add_argument("--rho-lo", type=float, default=DEFAULT_RHO_LO)
    parser.add_argument("--rho-hi", type=float, default=DEFAULT_RHO_HI)
    parser.add_argument("--rounds", type=int, default=DEFAULT_ROUNDS)
    parser.add_argument("--sigma", type=float, default=None,
                        help="proximal weight (default: largest safe value)")
    parser.add_argument("--tol-kkt", type=float, default=1e-6)
    parser.add_argument("--tol-outer", type=float, default=1e-6)
    parser.add_argument("--max-outer", type=int, default=500)
    parser.add_argument("--max-inner", type=int, default=20000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None)


def _config(args, rho: float) -> DcaConfig:
    inner = InnerConfig(tol_kkt=args.tol_kkt, max_iters=args.max_inner)
    return DcaConfig(
        params=PenaltyParams(rho=rho, sigma=args.sigma),
        inner=inner,
        tol_outer=args.tol_outer,
        max_outer=args.max_outer,
        rho_bisection=(args.rho_lo, args.rho_hi, args.rounds),
    )


def _solve_one(prob, args):
    """Run the solver per the flags; returns a result dict."""
    start = time.perf_counter()
    if args.rho is not None:
        outcome = run_dca(prob, _config(args, args.rho))
        rho_used = args.rho
    else:
        outcome, rho_used = bisect_rho(prob, _config(args, args.rho_hi))
    elapsed = time.perf_counter() - start

    rounded = round_solution(prob, outcome.Y_final)
    ratio = outcome.state.rank_history[-1]
    cert = outcome.cert_final
    return {
        "outcome": outcome,
        "rounded": rounded,
        "rho": rho_used,
        "rank_ratio": ratio,
        "rank_one": bool(ratio <= TOL_RANK),
        "relaxation_value": float(prob.cost.inner(outcome.Y_final)),
        "wall_time_s": elapsed,
        "residuals": None if cert is None else {
            "affine": cert.affine_residual,
            "cone": cert.cone_residual,
            "dual": cert.dual_residual,
            "compl": cert.compl_residual,
        },
    }


def _report(name: str, n: int, result, opt_reference) -> dict:
    rounded = result["rounded"]
    gap = None
    if opt_reference is not None and opt_reference != 0:
        gap = compute_gap(rounded.objective, float(opt_reference))
    outcome = result["outcome"]
    return {
        "schema_version": SCHEMA_VERSION,
        "instance": name,
        "n": n,
        "kind": rounded.kind,
        "rho": result["rho"],
        "status": outcome.status,
        "rank_one": result["rank_one"],
        "rank_ratio": result["rank_ratio"],
        "relaxation_value": result["relaxation_value"],
        "objective": rounded.objective,
        "assignment": [int(v) + 1 for v in np.asarray(rounded.assignment)],
        "opt_reference": opt_reference,
        "gap_percent": gap,
        "outer_iters": outcome.state.k,
        "inner_iters": outcome.state.inner_iters,
        "wall_time_s": result["wall_time_s"],
        "time_hhmmss": format_hhmmss(result["wall_time_s"]),
        "residuals": result["residuals"],
    }


def _print_report(report: dict) -> None:
    print(f"instance      {report['instance']} (n={report['n']})")
    print(f"status        {report['status']}")
    print(f"rho           {report['rho']:g}")
    print(
        f"rank          {'one' if report['rank_one'] else 'NOT one'} "
        f"(ratio {report['rank_ratio']:.2e})"
    )
    print(f"relaxation    {report['relaxation_value']:.6f}")
    print(f"objective     {report['objective']:.6f}")
    if report["gap_percent"] is not None:
        print(f"gap           {report['gap_percent']:.4f}% "
              f"(reference {report['opt_reference']})")
    print(f"assignment    {' '.join(str(v) for v in report['assignment'])}")
    print(
        f"iterations    {report['outer_iters']} outer / "
        f"{report['inner_iters']} inner"
    )
    print(f"time          {report['time_hhmmss']} "
          f"({report['wall_time_s']:.2f}s)")


def cmd_solve(args) -> int:
    try:
        inst_file = instance_io.load_instance(args.path)
        sol_file = None
        if args.sln:
            sol_file = instance_io.load_solution(args.sln)
            inst = instance_io.validate_pair(inst_file, sol_file)
        else:
            inst = inst_file.to_instance()
    except (OSError, RankDnnError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    prob = build_qap(inst)
    result = _solve_one(prob, args)
    opt_reference = None if sol_file is None else sol_file.opt_value
    report = _report(inst_file.name, inst.n, result, opt_reference)

    if args.json == "-":
        json.dump(report, sys.stdout, indent=2)
        print()
    else:
        _print_report(report)
        if args.json:
            with open(args.json, "w", encoding="ascii") as fh:
                json.dump(report, fh, indent=2)
            print(f"json          {args.json}")
    return 0 if report["status"] == STATUS_STATIONARY else 2


def cmd_sweep_rho(args) -> int:
    try:
        inst_file = instance_io.load_instance(args.path)
        sol_file = instance_io.load_solution(args.sln) if args.sln else None
        inst = (
            instance_io.validate_pair(inst_file, sol_file)
            if sol_file is not None
            else inst_file.to_instance()
        )
        grid = [float(tok) for tok in args.grid.split(",") if tok.strip()]
    except (OSError, ValueError, RankDnnError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not grid:
        print("error: empty grid", file=sys.stderr)
        return 1

    reference = None
    if sol_file is not None:
        reference = float(sol_file.opt_value)
    elif inst.n <= 8:
        reference = qap_brute_force(inst)[0]

    prob = build_qap(inst)
    rows = []
    for rho in grid:
        start = time.perf_counter()
        outcome = run_dca(prob, _config(args, rho))
        elapsed = time.perf_counter() - start
        rounded = round_solution(prob, outcome.Y_final)
        lam = eig(outcome.Y_final).eigenvalues
        rank = int((lam > TOL_RANK * max(lam[0], 1.0)).sum()) if lam[0] > 0 else 0
        gap = ""
        if reference is not None and reference != 0:
            gap = f"{compute_gap(rounded.objective, reference):.6f}"
        rows.append(
            {
                "rho": f"{rho:g}",
                "gap_percent": gap,
                "rank": rank,
                "f_rho": f"{outcome.state.f_history[-1]:.9e}",
                "time_s": f"{elapsed:.3f}",
            }
        )

    with open(args.out, "w", newline="", encoding="ascii") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["rho", "gap_percent", "rank", "f_rho", "time_s"]
        )
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_bench(args) -> int:
    try:
        lines = [
            line.strip()
            for line in open(args.manifest, encoding="ascii")
            if line.strip() and not line.strip().startswith("#")
        ]
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    rows = []
    for line in lines:
        parts = [p.strip() for p in line.split(",")]
        dat_path, sln_path = parts[0], parts[1] if len(parts) > 1 else None
        try:
            inst_file = instance_io.load_instance(dat_path)
            sol_file = (
                instance_io.load_solution(sln_path) if sln_path else None
            )
            inst = (
                instance_io.validate_pair(inst_file, sol_file)
                if sol_file is not None
                else inst_file.to_instance()
            )
        except (OSError, RankDnnError) as exc:
            print(f"error: {dat_path}: {exc}", file=sys.stderr)
            return 1

        opt = None
        if sol_file is not None:
            opt = float(sol_file.opt_value)
        elif inst.n <= 10:
            opt = qap_brute_force(inst)[0]

        prob = build_qap(inst)
        result = _solve_one(prob, args)
        rounded = result["rounded"]
        gap = ""
        if opt is not None and opt != 0:
            gap = f"{compute_gap(rounded.objective, opt):.4f}"
        rows.append(
            {
                "problem": inst_file.name,
                "opt": "" if opt is None else f"{opt:g}",
                "pdca": f"{rounded.objective:g}",
                "gap_percent": gap,
                "time": format_hhmmss(result["wall_time_s"]),
                "assignment": " ".join(
                    str(int(v) + 1) for v in rounded.assignment
                ),
            }
        )

    fields = ["problem", "opt", "pdca", "gap_percent", "time", "assignment"]
    with open(args.out, "w", newline="", encoding="ascii") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)

    widths = {f: max(len(f), *(len(str(r[f])) for r in rows)) for f in fields}
    header = "  ".join(f.ljust(widths[f]) for f in fields)
    print(header)
    print("-" * len(header))
    for r in rows:
        print("  ".join(str(r[f]).ljust(widths[f]) for f in fields))
    return 0


def cmd_verify(args) -> int:
    """Check lift/optimum equivalence and extraction round trips on seeded
    random instances; nonzero exit on any mismatch."""
    from itertools import permutations

    from .extract import extract_permutation

    rng = np.random.default_rng(args.seed)
    failures = 0
    checks = 0

    for trial in range(args.trials):
        n = 3 + trial % max(1, args.n_max - 2)
        inst = instance_io.generate_random(n, int(rng.integers(0, 2**31)))
        prob = build_qap(inst)
        opt, minimizers = qap_brute_force(inst)

        lifted_best = min(
            prob.cost.inner(lift_solution(prob, perm))
            for perm in permutations(range(n))
        )
        checks += 1
        if round(lifted_best) != round(opt):
            failures += 1
            print(f"MISMATCH qap n={n}: lifted {lifted_best} vs oracle {opt}")

        perm = minimizers[0]
        y = lift_solution(prob, perm)
        back = round_to_permutation(extract_permutation(y, n))
        checks += 1
        if tuple(back.tolist()) != tuple(perm):
            failures += 1
            print(f"MISMATCH round-trip n={n}: {back} vs {perm}")

    for trial in range(max(1, args.trials // 5)):
        n = 4 + trial % 3
        inst = instance_io.generate_random_tripartition(
            n, int(rng.integers(0, 2**31))
        )
        prob = build_tripartition(inst)
        opt, _ = tripartition_brute_force(inst)

        best = min(
            prob.cost.inner(lift_solution(prob, labels))
            for labels in _all_partitions(n, inst.sizes)
        )
        checks += 1
        if round(best, 6) != round(opt, 6):
            failures += 1
            print(f"MISMATCH tripartition n={n}: lifted {best} vs oracle {opt}")

    if failures:
        print(f"FAILED: {failures} of {checks} checks")
        return 1
    print(f"ok: {checks} checks passed")
    return 0


def _all_partitions(n, sizes):
    from itertools import combinations

    m1, m2, _ = sizes
    vertices = range(n)
    for s1 in combinations(vertices, m1):
        rest = [v for v in vertices if v not in s1]
        for s2 in combinations(rest, m2):
            labels = np.full(n, 2, dtype=int)
            labels[list(s1)] = 0
            labels[list(s2)] = 1
            yield labels


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rankdnn",
        description="Rank-one doubly-nonnegative solver for assignment-type "
        "problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one instance file")
    p_solve.add_argument("path")
    p_solve.add_argument("--sln", default=None, help="reference solution file")
    p_solve.add_argument("--json", default=None,
                         help="write a JSON report here ('-' for stdout)")
    _solver_flags(p_solve)

    p_sweep = sub.add_parser("sweep-rho", help="CSV study over penalty weights")
    p_sweep.add_argument("path")
    p_sweep.add_argument("--grid", required=True,
                         help="comma-separated weights, e.g. 0.1,1,10")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--sln", default=None)
    _solver_flags(p_sweep)

    p_bench = sub.add_parser("bench", help="benchmark a manifest of instances")
    p_bench.add_argument("--manifest", required=True,
                         help="lines of 'instance.dat[,reference.sln]'")
    p_bench.add_argument("--out", required=True)
    _solver_flags(p_bench)

    p_verify = sub.add_parser("verify", help="oracle equivalence suite")
    p_verify.add_argument("--n-max", type=int, default=4)
    p_verify.add_argument("--trials", type=int, default=50)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--threads", type=int, default=None)

    args = parser.parse_args(argv)
    _apply_thread_limit(getattr(args, "threads", None))
    if args.command == "solve":
        return cmd_solve(args)
    if args.command == "sweep-rho":
        return cmd_sweep_rho(args)
    if args.command == "bench":
        return cmd_bench(args)
    return cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line driver: ``gen``, ``solve``, ``bench`` and ``check``.

Exit codes: 0 solved to tolerance (or all checks passed), 1 a ``check``
comparison failed, 2 iteration or time budget exhausted, 3 bad input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import backend
from .generators import FAMILIES, generate
from .io import ParseError, read_problem, write_problem
from .report import bench_rows, csv_table, markdown_table
from .solvers import SOLVERS, make_params, run_solver

EXIT_OK, EXIT_CHECK, EXIT_MAXITER, EXIT_INPUT = 0, 1, 2, 3


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def _parser():
    p = _Parser(prog="blockqp", description="Block-angular convex QP solvers.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a problem file")
    g.add_argument("--family", required=True, choices=FAMILIES)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mi", type=int, help="local rows per block (rand-*)")
    g.add_argument("--ni", type=int, help="variables per block (rand-*)")
    g.add_argument("--m0", type=int, help="coupling rows (rand-*)")
    g.add_argument("--N", type=int, help="number of blocks / commodities / tables")
    g.add_argument("--rows", type=int, help="table rows (cta)")
    g.add_argument("--cols", type=int, help="table columns (cta)")
    g.add_argument("--nodes", type=int, help="random graph nodes (mcf-*)")
    g.add_argument("--extra-arcs", type=int, help="random graph extra arcs (mcf-*)")
    g.add_argument("--grid", type=int, nargs=2, metavar=("R", "C"), help="grid graph (mcf-*)")
    g.add_argument("-o", "--output", required=True)

    def solver_opts(q, many=False):
        if many:
            q.add_argument("--solvers", default="sgs-admm", help=f"comma list from {','.join(SOLVERS)}")
        else:
            q.add_argument("--solver", default="sgs-admm", choices=SOLVERS)
        q.add_argument("--tol", type=float, default=1e-5)
        q.add_argument("--tau", type=float)
        q.add_argument("--sigma", type=float)
        q.add_argument("--max-iter", type=int)
        q.add_argument("--threads", type=int, default=1)
        q.add_argument("--chi", action="store_true", help="chi-sharpened majorizer (spalm-b, dqa)")
        q.add_argument("--linear-solver", choices=("direct", "pcg"), help="sgs-admm linear systems")
        q.add_argument("--backend", choices=("python", "compiled"), help="kernel backend")

    s = sub.add_parser("solve", help="solve one problem file")
    s.add_argument("problem")
    solver_opts(s)
    s.add_argument("--report", help="write the report (.json, or .csv for the residual trace)")
    s.add_argument("--quiet", action="store_true")

    b = sub.add_parser("bench", help="solve every *.bap file in a directory with each solver")
    b.add_argument("directory")
    solver_opts(b, many=True)
    b.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    b.add_argument("--format", choices=("md", "csv"), default="md")
    b.add_argument("-o", "--output", help="table file (default stdout)")
    b.add_argument("--reports", help="directory for per-run JSON reports")

    c = sub.add_parser("check", help="solve, compare with the oracle and certify the descent inequality")
    c.add_argument("problems", nargs="+")
    solver_opts(c, many=True)
    c.add_argument("--obj-tol", type=float, default=1e-4)
    return p


def _extra(args, solver):
    out = {}
    if args.chi and solver in ("spalm-b", "dqa"):
        out["chi_sharpening"] = True
    if args.linear_solver and solver == "sgs-admm":
        out["linear_solver"] = args.linear_solver
    return out


def _params(args, solver):
    try:
        return make_params(solver, tol=args.tol, tau=args.tau, sigma=args.sigma, max_iter=args.max_iter,
                           threads=args.threads, **_extra(args, solver))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _kernels(args):
    try:
        return backend.get(args.backend)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _read(path):
    if not os.path.isfile(path):
        raise InputError(f"no such problem file: {path}")
    try:
        return read_problem(path)
    except ParseError as exc:
        raise InputError(f"{path}: {exc}") from None


def _solve(problem, solver, params, kernels):
    try:
        return run_solver(problem, solver, params=params, kernels=kernels)
    except ValueError as exc:  # validation
        raise InputError(str(exc)) from None


def cmd_gen(args):
    kw = {k: getattr(args, k) for k in ("mi", "ni", "m0", "N", "rows", "cols", "nodes") if getattr(args, k) is not None}
    if args.extra_arcs is not None:
        kw["extra_arcs"] = args.extra_arcs
    if args.grid is not None:
        kw["grid"] = tuple(args.grid)
    try:
        prob = generate(args.family, seed=args.seed, **kw)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    write_problem(prob, args.output)
    print(f"wrote {args.output}: {prob.name}, {prob.nvars} variables, {prob.ncons} rows")
    return EXIT_OK


def _summary(rep):
    f = rep.final
    lines = [f"solver      {rep.solver}", f"problem     {rep.problem}", f"status      {rep.termination}",
             f"iterations  {rep.iterations} (inner {rep.inner_iterations})", f"time        {rep.wall_time:.3f} s"]
    if f is not None:
        lines += [f"eta         {f.eta:.3e}  (P {f.eta_P:.1e}, D {f.eta_D:.1e}, Q {f.eta_Q:.1e}, "
                  f"K {f.eta_K:.1e}, S {f.eta_S:.1e})",
                  f"objective   {f.primal_obj:.12e}  (dual {f.dual_obj:.12e})"]
    return "\n".join(lines)


def cmd_solve(args):
    prob = _read(args.problem)
    params = _params(args, args.solver)
    _, rep = _solve(prob, args.solver, params, _kernels(args))
    if args.report:
        rep.write(args.report)
    if not args.quiet:
        print(_summary(rep))
    return EXIT_OK if rep.converged else EXIT_MAXITER


def _bench_job(job):
    path, solver, params, kname = job
    prob = read_problem(path)
    _, rep = run_solver(prob, solver, params=params, kernels=backend.get(kname))
    return os.path.basename(path), rep


def _solver_list(text):
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in names if s not in SOLVERS]
    if bad or not names:
        raise InputError(f"unknown solver(s) {bad}; choose from {', '.join(SOLVERS)}")
    return names


def cmd_bench(args):
    if not os.path.isdir(args.directory):
        raise InputError(f"no such directory: {args.directory}")
    files = sorted(os.path.join(args.directory, f) for f in os.listdir(args.directory) if f.endswith(".bap"))
    if not files:
        raise InputError(f"no .bap files in {args.directory}")
    for f in files:
        _read(f)
    solvers = _solver_list(args.solvers)
    kname = args.backend or backend.NAME
    _kernels(args)
    jobs = [(f, s, _params(args, s), kname) for f in files for s in solvers]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_bench_job, jobs))
    else:
        results = [_bench_job(j) for j in jobs]
    rows = bench_rows(results)
    table = markdown_table(rows) if args.format == "md" else csv_table(rows)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(table)
    else:
        sys.stdout.write(table)
    if args.reports:
        os.makedirs(args.reports, exist_ok=True)
        for (name, rep), (_, solver, _, _) in zip(results, jobs):
            rep.write(os.path.join(args.reports, f"{os.path.splitext(name)[0]}.{solver}.json"))
    return EXIT_OK if all(rep.converged for _, rep in results) else EXIT_MAXITER


def cmd_check(args):
    from .oracle import OracleError, oracle_solve
    from .palm import PalmParams, PalmSolver, check_theorem1

    solvers = _solver_list(args.solvers)
    kernels = _kernels(args)
    ok, budget = True, True
    out = []
    for path in args.problems:
        prob = _read(path)
        try:
            orc = oracle_solve(prob)
        except OracleError as exc:
            raise InputError(f"{path}: {exc}") from None
        xo = np.concatenate(orc.x)
        for solver in solvers:
            it, rep = _solve(prob, solver, _params(args, solver), kernels)
            rel = abs(rep.objective - orc.objective) / max(1.0, abs(orc.objective))
            dx = float(np.abs(np.concatenate(it.x) - xo).max() / (1.0 + np.abs(xo).max()))
            good = rep.converged and rel <= args.obj_tol
            ok &= good
            budget &= rep.converged
            out.append({"problem": path, "solver": solver, "status": rep.termination, "eta": rep.eta,
                        "objective": rep.objective, "oracle": orc.objective, "rel_obj": rel, "x_err": dx,
                        "pass": bool(good)})
        # descent certificate for the single-step method at tau = 1
        pp = PalmParams(variant="SPALM", tau=1.0, sub_tol=1e-10, keep_history=True, max_outer=50, tol=0.0)
        ps = PalmSolver(prob, pp, kernels)
        st, _ = ps.run()
        cert = check_theorem1(prob, ps.maj, st.history, orc.x, orc.y0, pp.tau, pp.sigma)
        ok &= cert.monotone
        out.append({"problem": path, "certificate": cert.label, "monotone": cert.monotone,
                    "inequality": cert.passed, "worst_slack": cert.worst, "iterations": len(cert.descent)})
    print(json.dumps(out, indent=2, default=float))
    if not budget:
        return EXIT_MAXITER
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "bench": cmd_bench, "check": cmd_check}


def run_cli(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.cmd](args)
    except InputError as exc:
        print(f"blockqp: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()

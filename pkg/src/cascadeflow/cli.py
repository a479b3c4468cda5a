"""Command-line entry point: ``run``, ``validate`` and ``solve``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .network import CaseFormatError, find_islands, load_case, scale_loading, validate
from .runner import (EXIT_COLLAPSE, EXIT_OK, EXIT_UNRESOLVED, EXIT_USAGE, ReportError, RunConfig, emit_report,
                     exit_code, run_contingency_set, summary_row)
from .stage1 import Feasibility, SolverOptions, shed_mw, solve_island


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cascadeflow", description="Steady-state cascading-outage simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one cascade per contingency event")
    run.add_argument("--case", required=True, type=Path)
    run.add_argument("--lf", type=float, default=1.0, help="loading factor")
    run.add_argument("--event", action="append", required=True, metavar="SPEC",
                     help="trip:branch:<id>, trip:gen:<id> or trip:load:<id>; repeatable")
    run.add_argument("--parallel", type=int, default=1, metavar="N")
    run.add_argument("--out", type=Path, default=Path("reports"))
    run.add_argument("--beta", type=float, help="override beta of every DISCRETE segment")
    run.add_argument("--feas-tol", type=float)
    run.add_argument("--max-stages", type=int)
    run.add_argument("--deadband", type=float, default=0.0, help="relay deadband as a fraction of rating")

    val = sub.add_parser("validate", help="check a case file")
    val.add_argument("--case", required=True, type=Path)

    sol = sub.add_parser("solve", help="single steady-state solve of every island")
    sol.add_argument("--case", required=True, type=Path)
    sol.add_argument("--lf", type=float, default=1.0)
    sol.add_argument("--beta", type=float)
    sol.add_argument("--feas-tol", type=float)
    return ap


def _load(path: Path):
    try:
        return load_case(path)
    except CaseFormatError as exc:
        raise SystemExit(_fail(f"{path}: invalid case at {exc.path}: {exc.message}"))
    except OSError as exc:
        raise SystemExit(_fail(f"{path}: {exc.strerror or exc}"))


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _checked(path: Path):
    net = _load(path)
    issues = validate(net)
    if issues:
        for issue in issues:
            print(f"{path}: {issue}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    return net


def cmd_validate(args) -> int:
    net = _load(args.case)
    issues = validate(net)
    for issue in issues:
        print(issue)
    if issues:
        return EXIT_USAGE
    print(f"{args.case}: ok ({len(net.buses)} buses, {len(net.branches)} branches, "
          f"{len(net.generators)} generators, {len(net.loads)} loads)")
    return EXIT_OK


def cmd_solve(args) -> int:
    if not args.lf > 0:
        return _fail("--lf must be positive")
    net = scale_loading(_checked(args.case), args.lf)
    opts = SolverOptions()
    if args.beta is not None:
        opts = replace(opts, beta_override=args.beta)
    if args.feas_tol is not None:
        opts = replace(opts, feas_tol=args.feas_tol)
    code = EXIT_OK
    for island in find_islands(net):
        head = f"island {island.id} ({len(island.buses)} buses)"
        if island.reference_gen is None:
            print(f"{head}: no generator, blacked out")
            code = max(code, EXIT_COLLAPSE)
            continue
        sol = solve_island(net, island, opts)
        res = sol.result
        if not res.converged:
            print(f"{head}: {res.status.value} after {res.iterations} iterations ({res.message})")
            code = EXIT_UNRESOLVED
            continue
        print(f"{head}: {res.status.value} {res.feasibility.value} in {res.iterations} iterations"
              f"{' (homotopy)' if sol.used_homotopy else ''}")
        print(f"  delta_f_hz      {res.delta_f:.6f}")
        print(f"  shed_mw         {shed_mw(sol.problem, res):.4f}")
        print(f"  worst_if_bus    {res.worst_if_bus}  |I_F| = {res.max_if:.3e} pu")
        if res.feasibility is Feasibility.INFEASIBLE and code == EXIT_OK:
            code = EXIT_COLLAPSE
    return code


def cmd_run(args) -> int:
    try:
        config = RunConfig(case=args.case, events=tuple(args.event), loading_factor=args.lf,
                           parallelism=args.parallel, out_dir=args.out, beta=args.beta,
                           feas_tol=args.feas_tol, max_stages=args.max_stages, relay_deadband=args.deadband)
        events = config.contingencies()
        params = config.params()
    except ValueError as exc:
        return _fail(str(exc))
    net = scale_loading(_checked(config.case), config.loading_factor)
    for ev in events:
        if not net.has_device(*ev.device):
            return _fail(f"event {ev.spec}: no such device in {config.case}")
    reports = run_contingency_set(net, events, params, config.parallelism)
    try:
        config.out_dir.mkdir(parents=True, exist_ok=True)
        emit_report(reports, config.out_dir, net)
    except (ReportError, OSError) as exc:
        return _fail(str(exc))
    for rep in reports:
        row = summary_row(rep)
        print(f"{row['event']:<20} {row['outcome']:<17} stages={row['stages']} shed_mw={row['total_shed_mw']}")
    return exit_code(reports)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return {"run": cmd_run, "validate": cmd_validate, "solve": cmd_solve}[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Subcommands:

* ``run --config FILE [--seed S] [--out DIR]``: execute one configured
  run, writing the trace CSV and certificate JSON.
* ``certify --config FILE --point "v1,v2,..."``: certify a point of the
  configured problem.
* ``bench --suite {trap,rates,randomized,covering} [--out DIR]``: run a
  benchmark suite and write its summary.

Exit codes: 0 on success or a DStationary verdict, 2 on
CriticalNotDStationary, 3 on NotCritical, 1 on any error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import __version__, bench, certify
from .certify import Verdict
from .core import SolverError
from .problems import build_problem

_VERDICT_EXIT = {
    Verdict.D_STATIONARY: 0,
    Verdict.CRITICAL_NOT_D_STATIONARY: 2,
    Verdict.NOT_CRITICAL: 3,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcdirect",
        description="Solvers and certificates for directional stationarity "
                    "of difference-of-convex programs.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configured run")
    p_run.add_argument("--config", required=True, help="JSON run config (schema 1)")
    p_run.add_argument("--seed", type=int, default=None, help="override the seed")
    p_run.add_argument("--out", default=None, help="override the output directory")

    p_cert = sub.add_parser("certify", help="certify a point of a configured problem")
    p_cert.add_argument("--config", required=True)
    p_cert.add_argument("--point", required=True,
                        help="comma-separated coordinates")

    p_bench = sub.add_parser("bench", help="run a benchmark suite")
    p_bench.add_argument("--suite", required=True, choices=sorted(bench.SUITES))
    p_bench.add_argument("--out", default=None)
    return parser


def _cmd_run(args) -> int:
    rc = bench.load_run_config(args.config)
    if args.seed is not None:
        rc = dataclasses.replace(
            rc, solver=dataclasses.replace(rc.solver, seed=args.seed))
    if args.out is not None:
        rc = dataclasses.replace(rc, output_dir=args.out)
    trace, cert = bench.run_config(rc)
    print(f"run {rc.name}: {trace.termination.value} after {trace.iterations} "
          f"iterations, f = {trace.records[-1].f_value!r}")
    print(cert.to_text())
    return _VERDICT_EXIT[cert.verdict]


def _cmd_certify(args) -> int:
    rc = bench.load_run_config(args.config)
    program = build_problem(rc.problem)
    point = np.array([float(part) for part in args.point.split(",")])
    delta = rc.solver.delta if rc.solver.delta is not None else 0.0
    cert = certify.certificate(program, point, delta=delta,
                               tol_stat=rc.solver.tol_stat,
                               tol_sub=rc.solver.tol_sub)
    print(cert.to_text())
    return _VERDICT_EXIT[cert.verdict]


def _cmd_bench(args) -> int:
    summary = bench.SUITES[args.suite](args.out)
    for row in summary["rows"]:
        print(row)
    if args.out:
        print(f"summary written to {args.out}/{args.suite}_summary.json")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "certify":
            return _cmd_certify(args)
        if args.command == "bench":
            return _cmd_bench(args)
    except (SolverError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())

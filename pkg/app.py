"""
ncsolve - Command Line Entry Point
==================================

First-order solvers for structured nonconvex composite problems, with
computable stationarity certificates and iteration planners.

Commands:
- run <config.json>           execute a run configuration, write traces
- plan <planner> --eps ...    print planned iteration counts for an eps grid
- verify <suite> [--seed]     run a property-verification suite
- table <table1|table2>       run a benchmark batch and write its CSV

Exit codes: 0 success, 1 usage or configuration error, 2 certificate not
reached (or property violated).
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

import pandas as pd

from config.settings import Settings, get_settings
from modules.errors import SolverError
from modules.experiments import load_run_config, plan_table, run_config, run_table1, run_table2
from modules.verification import SUITES, run_suite

logger = logging.getLogger("ncsolve")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CERTIFIED = 2


def setup_logging(settings: Settings) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if settings.LOG_FILE_PATH:
        handlers.append(logging.FileHandler(settings.LOG_FILE_PATH))
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


def output_dir(settings: Settings, requested: Optional[str] = None) -> str:
    """The environment override wins over config and command-line values."""
    return settings.OUTPUT_DIR or requested or "results"


# =============================================================================
# COMMANDS
# =============================================================================


def cmd_run(args, settings: Settings) -> int:
    config = load_run_config(args.config)
    target = output_dir(settings, args.output_dir or config.output_dir)
    outcomes = run_config(config, target, settings)
    for outcome in outcomes:
        cert = outcome.trace.certificate
        print(
            f"seed={outcome.seed} algorithm={outcome.trace.algorithm} "
            f"iterations={outcome.trace.n_iterations} best_k={outcome.trace.best_row.k} "
            f"value={outcome.trace.best_row.cert:.6g} "
            f"passed={outcome.passed if cert is not None else 'n/a'} -> {outcome.paths['csv']}"
        )
    if all(o.passed for o in outcomes):
        return EXIT_OK
    logger.warning("Certificate not reached within N for at least one seed")
    return EXIT_NOT_CERTIFIED


def cmd_plan(args, settings: Settings) -> int:
    params = {
        "phi_gap": args.phi_gap,
        "diam_p": args.diam_p,
        "diam_2": args.diam_2 if args.diam_2 is not None else args.diam_p,
        "diam_over": args.diam_over if args.diam_over is not None else args.diam_p,
        "diam_under": args.diam_under if args.diam_under is not None else args.diam_p,
        "lam": args.lam,
        "p": args.p,
        "sigma": args.sigma,
        "M": args.M,
    }
    frame = plan_table(args.planner, args.eps, **params)
    print(frame.to_string(index=False))
    return EXIT_OK


def cmd_verify(args, settings: Settings) -> int:
    report = run_suite(args.suite, args.seed, settings)
    print(f"suite={report.suite} seed={report.seed} checks={report.checks} "
          f"violations={len(report.violations)} inconclusive={len(report.inconclusive)}")
    for key, value in sorted(report.metrics.items()):
        print(f"  {key} = {value}")
    if report.table:
        print(pd.DataFrame(report.table).to_string(index=False))
    if report.passed:
        return EXIT_OK
    if report.violations:
        print("counterexample: " + json.dumps(report.counterexample(), default=str))
    else:
        print(f"undecided: {len(report.inconclusive)} checks hit the step cap")
    return EXIT_NOT_CERTIFIED


def cmd_table(args, settings: Settings) -> int:
    if args.style == "table1":
        report = run_table1(args.d, args.n, args.instances, args.seed, settings, rho=args.rho)
    else:
        report = run_table2(args.n, args.m, args.instances, args.seed, settings, gamma=args.gamma)
    path = report.write_csv(output_dir(settings, args.output_dir))
    print(report.to_frame().to_string(index=False))
    print(report.summary().to_string())
    print(f"written: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncsolve", description=__doc__.split("\n\n")[1])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a JSON run configuration")
    run.add_argument("config")
    run.add_argument("--output-dir", default=None)
    run.set_defaults(handler=cmd_run)

    plan = sub.add_parser("plan", help="planned iteration counts for an eps grid")
    plan.add_argument("planner", choices=["alg1", "concave", "alg3", "alg4", "multiblock"])
    plan.add_argument("--eps", type=float, nargs="+", required=True)
    plan.add_argument("--phi-gap", type=float, default=1.0)
    plan.add_argument("--diam-p", type=float, default=2.0)
    plan.add_argument("--diam-2", type=float, default=None)
    plan.add_argument("--diam-over", type=float, default=None)
    plan.add_argument("--diam-under", type=float, default=None)
    plan.add_argument("--lam", type=float, default=1.0)
    plan.add_argument("--p", type=float, default=2.0)
    plan.add_argument("--sigma", type=float, default=0.0)
    plan.add_argument("--M", type=float, default=1.0)
    plan.set_defaults(handler=cmd_plan)

    verify = sub.add_parser("verify", help="run a property-verification suite")
    verify.add_argument("suite")
    verify.add_argument("--seed", type=int, default=0)
    verify.set_defaults(handler=cmd_verify)

    table = sub.add_parser("table", help="run a benchmark batch")
    table.add_argument("style", choices=["table1", "table2"])
    table.add_argument("--d", type=int, default=4)
    table.add_argument("--n", type=int, default=None)
    table.add_argument("--m", type=int, default=None)
    table.add_argument("--instances", type=int, default=10)
    table.add_argument("--seed", type=int, default=0)
    table.add_argument("--rho", type=float, default=None)
    table.add_argument("--gamma", type=float, default=None)
    table.add_argument("--output-dir", default=None)
    table.set_defaults(handler=cmd_table)
    return parser


def main(argv: Optional[List[str]] = None, settings: Optional[Settings] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    settings = settings or get_settings()
    setup_logging(settings)
    if args.command == "verify" and args.suite not in SUITES:
        logger.error(f"Unknown suite '{args.suite}'. Available: {', '.join(sorted(SUITES))}")
        return EXIT_USAGE
    if args.command == "table" and args.n is None:
        args.n = 8 if args.style == "table1" else 20

    try:
        return args.handler(args, settings)
    except SolverError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

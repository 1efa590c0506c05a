"""Command-line entry point: ``byzpp {run,sweep,verify,probs,solve}``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from ..sampling import prob_good_majority, prob_in_good_sample
from .config import OUTPUT_ENV, ConfigError, load_config
from .experiment import build_problem, run_experiment, run_sweep
from .verify import SUITES, verify_suite

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="TOML config file (defaults are used when omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key path, e.g. algorithm.gamma=0.01 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="byzpp", description="Byzantine-robust partial-participation optimisation simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment over all configured seeds",
                       epilog=f"${OUTPUT_ENV} overrides run.output")
    _add_config_args(p)

    p = sub.add_parser("sweep", help="grid over sweep.gamma x sweep.alpha; reports the best pair")
    _add_config_args(p)

    p = sub.add_parser("verify", help="run a Monte-Carlo / enumeration verification suite")
    p.add_argument("suite", choices=SUITES + ("all",))
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("probs", help="exact participation probabilities")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--g", type=int, required=True, help="number of good clients")
    p.add_argument("--c", type=int, required=True, help="cohort size")
    p.add_argument("--delta", type=float, required=True)

    p = sub.add_parser("solve", help="compute the reference optimum f*")
    _add_config_args(p)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.overrides).validate()
    res = run_experiment(cfg)
    s = res.summary
    print(f"f* = {res.problem.f_star:.17g}")
    print(f"final gap: mean {s.final_gap_mean:.6e} +- {s.final_gap_stderr:.2e} over {len(s.final_gaps)} seeds")
    print(f"metrics written to {res.csv_path}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.overrides).validate()
    best, entries = run_sweep(cfg)
    print(f"{'alpha':>8} {'gamma':>8} {'median final gap':>18}")
    for e in entries:
        print(f"{e.alpha:>8g} {e.gamma:>8g} {e.median_final:>18.6e}")
    print(f"best: alpha={best.alpha:g} gamma={best.gamma:g} (median final gap {best.median_final:.6e})")
    return EXIT_OK


def _cmd_verify(args) -> int:
    names = SUITES if args.suite == "all" else (args.suite,)
    ok = True
    for name in names:
        report = verify_suite(name, args.trials, args.seed)
        print(report.render())
        ok &= report.passed
    return EXIT_OK if ok else EXIT_FAILED


def _cmd_probs(args) -> int:
    try:
        pg = prob_good_majority(args.n, args.g, args.c, args.delta)
        print(f"p_G = {pg} ~ {float(pg):.17g}")
        pc = prob_in_good_sample(args.n, args.g, args.c, args.delta)
        print(f"P_G_C = {pc} ~ {float(pc):.17g}")
    except ZeroDivisionError as exc:
        print(f"P_G_C undefined: {exc}")
        return EXIT_INVALID
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return EXIT_OK


def _cmd_solve(args) -> int:
    cfg = load_config(args.config, args.overrides).validate()
    prob = build_problem(cfg)
    g = prob.world.f.full_gradient(prob.x_star)
    print(f"f* = {prob.f_star:.17g}")
    print(f"||grad f(x*)|| = {np.linalg.norm(g):.3e}")
    print(f"L = {prob.L:.6g}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "verify": _cmd_verify, "probs": _cmd_probs, "solve": _cmd_solve}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())

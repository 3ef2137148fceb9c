"""``rbc`` command-line entry point.

Exit status: 0 on success, 1 on a hard error, 2 when a batch finished but
some of its episodes or configurations failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments as ex
from .dataset import SplitSpec
from .errors import RbcError
from .fields import Grid

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


def _split(args) -> SplitSpec:
    return SplitSpec(train_end=args.train_end, test_length=args.test_length)


def _add_split(p):
    p.add_argument("--train-end", type=int, default=470, help="first test-window index (default 470)")
    p.add_argument("--test-length", type=int, default=30, help="test window length (default 30)")


class _Parser(argparse.ArgumentParser):
    # usage errors are hard errors; 2 is reserved for partial batch failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rbc", description="Koopman surrogates for 2D Rayleigh-Benard convection")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate convective-field episodes")
    p.add_argument("--ra", type=float, required=True)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nx", type=int, default=48)
    p.add_argument("--ny", type=int, default=32)
    p.add_argument("--pr", type=float, default=0.7)
    p.add_argument("--dt", type=float, default=0.025)
    p.add_argument("--cook-time", type=float, default=100.0, help="unrecorded spin-up time")
    p.add_argument("--length", type=float, default=500.0, help="recorded time per episode")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sweep", help="hyperparameter sweeps")
    p.add_argument("method", choices=["kdmd", "lran"])
    p.add_argument("--ra", type=float, required=True)
    p.add_argument("--data", required=True, help="directory of episode files")
    p.add_argument("--runs", type=int, default=10, help="LRAN random-search runs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--out", required=True, help="output CSV")
    _add_split(p)

    p = sub.add_parser("compare", help="evaluate KDMD and LRAN on every episode")
    p.add_argument("--ra", type=float, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--kdmd-config", help="JSON file; defaults to the tuned values for --ra")
    p.add_argument("--lran-config", help="JSON file; defaults to the tuned values for --ra")
    p.add_argument("--out", required=True, help="output directory")
    _add_split(p)

    p = sub.add_parser("render", help="write one snapshot as a PGM image")
    p.add_argument("--episode", required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--out", required=True)
    return parser


def run(args) -> int:
    if args.command == "simulate":
        report = ex.cmd_simulate(args.ra, args.episodes, args.seed, Grid(nx=args.nx, ny=args.ny), args.out,
                                 pr=args.pr, dt=args.dt, cook_time=args.cook_time, episode_length=args.length)
        return EXIT_PARTIAL if report.failures else EXIT_OK

    if args.command == "sweep":
        if args.method == "kdmd":
            result = ex.cmd_sweep_kdmd(args.data, args.ra, args.out, split=_split(args))
        else:
            result = ex.cmd_sweep_lran(args.data, args.ra, args.runs, args.seed, args.out, split=_split(args),
                                       max_epochs=args.max_epochs)
        best = result.sorted_by_mean()[0]
        print(f"{len(result.rows)} rows written to {args.out}; best mean NSSE {best.mean_nsse:.4g} with {best.config}")
        if result.failures:
            print(f"{len(result.failures)} configurations failed")
            return EXIT_PARTIAL
        return EXIT_OK

    if args.command == "compare":
        result = ex.cmd_compare(args.data, args.ra, args.kdmd_config, args.lran_config, args.out, split=_split(args))
        for name, curve in result.curves.items():
            print(f"{name}: mean NSSE over window {float(curve.mean.mean()):.4g}")
        for method, k, err in result.failures:
            print(f"{method} episode {k} failed: {err}")
        return EXIT_PARTIAL if result.failures else EXIT_OK

    path = ex.cmd_render(args.episode, args.index, args.out)
    print(path)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    ex.set_deterministic_threads()
    try:
        return run(args)
    except (RbcError, OSError, ValueError, IndexError, KeyError, json.JSONDecodeError) as exc:
        print(f"rbc: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

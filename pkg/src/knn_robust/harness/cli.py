"""``knn-robust`` command line."""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import InvariantError, UsageError
from .runner import MODES, ExperimentConfig, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2


def _k_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="knn-robust", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="decide robustness for every row of a test CSV")
    run.add_argument("--train", required=True)
    run.add_argument("--test", required=True)
    run.add_argument("--n", type=int, required=True, help="poisoning budget")
    run.add_argument("--folds", type=int, default=10)
    ks = run.add_mutually_exclusive_group()
    ks.add_argument("--k-stride", type=int)
    ks.add_argument("--k-list", type=_k_list)
    run.add_argument("--k-max", type=int)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--time-limit", type=float)
    run.add_argument("--mode", choices=MODES, default="full")
    run.add_argument("--poison-max", type=int)
    run.add_argument("--poison-seed", type=int, default=0)
    run.add_argument("--header", action="store_true")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig(
            train_path=args.train,
            test_path=args.test,
            n=args.n,
            folds=args.folds,
            k_stride=args.k_stride,
            k_max=args.k_max,
            k_list=args.k_list,
            seed=args.seed,
            time_limit_secs=args.time_limit,
            mode=args.mode,
            poison_max=args.poison_max,
            poison_seed=args.poison_seed,
            header=args.header,
            workers=args.workers,
        )
        report = run_experiment(cfg, out=args.out)
    except UsageError as exc:
        print(f"knn-robust: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantError as exc:
        print(f"knn-robust: internal check failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if any(row.get("error") == InvariantError.__name__ for row in report.inputs):
        print("knn-robust: internal check failed for some inputs; see the report", file=sys.stderr)
        return EXIT_INTERNAL
    agg = report.aggregate
    pct = agg["percentages"]
    print(f"{agg['inputs']} inputs: certified {pct['certified']}%, falsified {pct['falsified']}%, "
          f"unknown {pct['unknown']}%, mean time {agg['mean_time']:.3f}s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

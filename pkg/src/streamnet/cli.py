"""``streamnet-bench``: sweep the factorization drivers and emit a table."""

from __future__ import annotations

import argparse
import sys

from .bench import IMPLS, BenchConfig, CorrectnessFailure, run_bench, write_rows
from .errors import CoordinationError, NumericError
from .tiling import read_matrix


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="streamnet-bench",
        description="Benchmark the tiled Cholesky drivers against the serial baseline.",
    )
    ap.add_argument("--impl", action="append", choices=IMPLS, metavar="NAME",
                    help="implementation to run (repeatable; default: all five)")
    ap.add_argument("--n", type=int, default=None,
                    help="matrix order (default 256, or taken from --input)")
    ap.add_argument("--block", action="append", type=int, metavar="B",
                    help="tile size to sweep (repeatable; default 64)")
    ap.add_argument("--workers", action="append", type=int, metavar="W",
                    help="worker count to sweep (repeatable; default 1)")
    ap.add_argument("--seed", type=int, default=0, help="matrix generator seed")
    ap.add_argument("--reps", type=int, default=3,
                    help="repetitions per cell; the median is reported")
    ap.add_argument("--check", action="store_true",
                    help="compare every run bitwise against the serial oracle")
    ap.add_argument("--input", metavar="FILE",
                    help="load the matrix from FILE instead of generating one")
    ap.add_argument("--out", metavar="PATH", help="write the table here (default stdout)")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--pin", action="store_true",
                    help="best-effort: pin the process to the first max(workers) CPUs")
    return ap


def _pin(worker_counts):
    try:
        import os

        cpus = sorted(os.sched_getaffinity(0))[: max(worker_counts)]
        os.sched_setaffinity(0, cpus)
    except (AttributeError, OSError):
        pass  # unsupported platform; run unpinned


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        matrix = None
        n = args.n
        if args.input is not None:
            matrix = read_matrix(args.input)
            if n is None:
                n = matrix.shape[0]
            elif n != matrix.shape[0]:
                raise ValueError(
                    f"--n {n} conflicts with {args.input} (order {matrix.shape[0]})"
                )
        cfg = BenchConfig(
            impls=tuple(args.impl) if args.impl else IMPLS,
            n=256 if n is None else n,
            blocks=tuple(args.block) if args.block else (64,),
            workers=tuple(args.workers) if args.workers else (1,),
            seed=args.seed,
            reps=args.reps,
            check=args.check,
            matrix=matrix,
        )
        cfg.validate()
        if args.pin:
            _pin(cfg.workers)
        rows = run_bench(cfg)
        write_rows(rows, args.out, args.format)
    except CorrectnessFailure as exc:
        print(f"correctness check failed:\n{exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, CoordinationError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

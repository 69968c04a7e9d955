"""Compare the compiled kernel extension against the pure-Python fallback.

Runs the serial tiled factorization under each available backend, checks
the results are bit-identical, and prints per-backend wall times plus the
speedup of the compiled core.  Usage:

    python3 benchmarks/backend_compare.py [--n 512] [--block 64] [--reps 3]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from streamnet.kernels import available_backends, get_backend, set_backend
from streamnet.tiling import assemble, decompose, gen_spd, serial_tiled_cholesky


def time_backend(name: str, a, b: int, reps: int):
    previous = set_backend(name)
    try:
        walls = []
        out = None
        for _ in range(reps):
            t0 = time.perf_counter()
            out = assemble(serial_tiled_cholesky(decompose(a, b)))
            walls.append(time.perf_counter() - t0)
        return out, statistics.median(walls)
    finally:
        set_backend(previous)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--block", type=int, default=64)
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    a = gen_spd(args.n, seed=args.seed)
    names = available_backends()
    print(f"n={args.n} block={args.block} reps={args.reps} "
          f"(median reported; active default: {get_backend()})")
    results = {}
    for name in names:
        l, wall = time_backend(name, a, args.block, args.reps)
        results[name] = (l, wall)
        print(f"  {name:>8}: {wall * 1e3:9.2f} ms")
    if len(names) == 2:
        lp, lc = results["pure"][0], results["compiled"][0]
        identical = bool(np.array_equal(lp.view(np.uint64), lc.view(np.uint64)))
        print(f"  bitwise identical: {identical}")
        print(f"  compiled speedup over pure: "
              f"{results['pure'][1] / results['compiled'][1]:.1f}x")
        if not identical:
            return 1
    else:
        print("  (only one backend available; nothing to compare)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

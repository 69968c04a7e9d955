"""Benchmark harness comparing the five factorization drivers.

For each block size the serial driver is timed first (median over the
configured repetitions) and serves as the speedup baseline and, when
checking is on, as the bitwise oracle.  Every other (impl, workers)
pair in the sweep is then timed the same way.  One row comes out per
combination; the ``rep`` column records how many repetitions the median
aggregates.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .barrier_net import run_barrier
from .dataflow_net import run_dataflow
from .tiling import assemble, decompose, gen_spd, residual, serial_tiled_cholesky
from .tuplespace import run_cholesky_cnc

IMPLS = ("serial", "barrier", "dataflow", "cnc", "cnc-tuned")

CSV_FIELDS = (
    "impl", "n", "block", "workers", "seed", "rep", "wall_ms", "speedup",
    "residual", "checksum", "activations", "stalls", "barrier_waits",
)
CSV_HEADER = ",".join(CSV_FIELDS)


class CorrectnessFailure(Exception):
    """A checked run disagreed with the serial oracle."""


def _kernel_count(p: int) -> int:
    return p + p * (p - 1) // 2 + sum((p - 1 - k) * (p - k) // 2 for k in range(p))


def _serial_runner(a, n, b, workers):
    l = assemble(serial_tiled_cholesky(decompose(a, b)))
    info = {
        "kernel_activations": _kernel_count(n // b),
        "stalls": 0,
        "barrier_waits": 0,
    }
    return l, info


RUNNERS = {
    "serial": _serial_runner,
    "barrier": lambda a, n, b, w: run_barrier(a, n, b, workers=w),
    "dataflow": lambda a, n, b, w: run_dataflow(a, n, b, workers=w),
    "cnc": lambda a, n, b, w: run_cholesky_cnc(a, n, b, workers=w, tuned=False),
    "cnc-tuned": lambda a, n, b, w: run_cholesky_cnc(a, n, b, workers=w, tuned=True),
}


# -- checksum --------------------------------------------------------------

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def checksum(l: np.ndarray) -> int:
    """Order-independent 64-bit digest of a dense matrix.

    Each element contributes splitmix64(bits ^ index * golden-ratio) and
    the contributions are XOR-folded, so the value is independent of
    traversal order but flips if any single bit of any element changes
    (a one-ulp perturbation included).  Empty input digests to 0; the
    4x4 zero matrix digests to 0x04636c5ced86c583.
    """
    flat = np.ascontiguousarray(l, dtype="<f8").reshape(-1)
    if flat.size == 0:
        return 0
    x = flat.view(np.uint64) ^ (np.arange(flat.size, dtype=np.uint64) * np.uint64(_GOLDEN))
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(_MIX1)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(_MIX2)
    x = x ^ (x >> np.uint64(31))
    return int(np.bitwise_xor.reduce(x))


# -- configuration ---------------------------------------------------------


@dataclass
class BenchConfig:
    impls: tuple = IMPLS
    n: int = 256
    blocks: tuple = (64,)
    workers: tuple = (1,)
    seed: int = 0
    reps: int = 3
    check: bool = False
    matrix: np.ndarray | None = field(default=None, repr=False)

    def validate(self):
        for impl in self.impls:
            if impl not in IMPLS:
                raise ValueError(f"unknown impl {impl!r}; choose from {', '.join(IMPLS)}")
        if not self.impls:
            raise ValueError("no implementations selected")
        if self.n < 1:
            raise ValueError("n must be positive")
        for b in self.blocks:
            if b < 1 or self.n % b != 0:
                raise ValueError(f"block {b} does not divide n={self.n}")
        for w in self.workers:
            if w < 1:
                raise ValueError(f"workers must be >= 1, got {w}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.matrix is not None:
            if self.matrix.shape != (self.n, self.n):
                raise ValueError(
                    f"input matrix is {self.matrix.shape[0]}x{self.matrix.shape[1]}, "
                    f"but n={self.n}"
                )


# -- the sweep -------------------------------------------------------------


def _timed(runner, a, n, b, w, reps):
    walls = []
    out = None
    for _ in range(reps):
        t0 = time.perf_counter()
        l, info = runner(a, n, b, w)
        walls.append((time.perf_counter() - t0) * 1e3)
        out = (l, info)
    return out[0], out[1], statistics.median(walls)


def _diff_report(impl, b, w, l, oracle) -> str:
    mism = l.view(np.uint64) != oracle.view(np.uint64)
    count = int(np.count_nonzero(mism))
    lines = [
        f"{impl} (block={b}, workers={w}) disagrees with the serial oracle "
        f"in {count} of {l.size} elements"
    ]
    idx = np.argwhere(mism)
    for r, c in idx[:5]:
        lines.append(f"  [{r},{c}]: got {l[r, c]!r}, expected {oracle[r, c]!r}")
    if count > 5:
        lines.append(f"  ... {count - 5} more")
    return "\n".join(lines)


def run_bench(cfg: BenchConfig) -> list:
    """Run the sweep; returns one row dict per (impl, block, workers)."""
    cfg.validate()
    a = cfg.matrix if cfg.matrix is not None else gen_spd(cfg.n, cfg.seed)
    parallel = [i for i in cfg.impls if i != "serial"]
    rows = []

    def row(impl, b, w, wall, speed, l, info):
        return {
            "impl": impl,
            "n": cfg.n,
            "block": b,
            "workers": w,
            "seed": cfg.seed,
            "rep": cfg.reps,
            "wall_ms": wall,
            "speedup": speed,
            "residual": residual(a, l),
            "checksum": checksum(l),
            "activations": info["kernel_activations"],
            "stalls": info["stalls"],
            "barrier_waits": info["barrier_waits"],
        }

    for b in cfg.blocks:
        oracle, ser_info, ser_wall = _timed(RUNNERS["serial"], a, cfg.n, b, 1, cfg.reps)
        if "serial" in cfg.impls:
            rows.append(row("serial", b, 1, ser_wall, 1.0, oracle, ser_info))
        for impl in parallel:
            for w in cfg.workers:
                l, info, wall = _timed(RUNNERS[impl], a, cfg.n, b, w, cfg.reps)
                if cfg.check and not np.array_equal(
                    l.view(np.uint64), oracle.view(np.uint64)
                ):
                    raise CorrectnessFailure(_diff_report(impl, b, w, l, oracle))
                rows.append(row(impl, b, w, wall, ser_wall / wall, l, info))
    return rows


# -- output ----------------------------------------------------------------


def _format_row(r: dict) -> dict:
    out = dict(r)
    out["wall_ms"] = f"{r['wall_ms']:.3f}"
    out["speedup"] = f"{r['speedup']:.3f}"
    out["residual"] = f"{r['residual']:.3e}"
    out["checksum"] = f"{r['checksum']:016x}"
    return out


def render(rows: list, fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow(_format_row(r))
        return buf.getvalue()
    if fmt == "json":
        return json.dumps([_format_row(r) for r in rows], indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def write_rows(rows: list, path, fmt: str = "csv"):
    text = render(rows, fmt)
    if path is None:
        import sys

        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)

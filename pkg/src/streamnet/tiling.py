"""Tiled matrix plumbing shared by every factorisation driver.

A dense N x N array is cut into a p x p grid of contiguous b x b tiles
(p = N/b, and b must divide N).  Element (r, c) lands in tile
(r // b, c // b) at in-tile position (r % b, c % b).  The serial driver
here is the measurement baseline and the correctness oracle for the
coordinated drivers; all of them perform the same per-tile kernel calls
in an order that keeps results bitwise identical.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import NumericError
from .kernels import potrf_tile, trsm_tile, update_tile

_MAGIC = b"TCHO"


class TiledMatrix:
    """A p x p grid of b x b float64 tiles."""

    __slots__ = ("n", "b", "p", "tiles")

    def __init__(self, n, b, tiles):
        self.n = n
        self.b = b
        self.p = n // b
        self.tiles = tiles

    def tile(self, i, j):
        return self.tiles[i][j]


def locate(row: int, col: int, b: int):
    """Map a dense element to ((tile_i, tile_j), (in_i, in_j))."""
    return (row // b, col // b), (row % b, col % b)


def decompose(a: np.ndarray, b: int) -> TiledMatrix:
    """Cut a square dense array into contiguous b x b tile copies."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if b < 1 or n % b:
        raise ValueError(f"block size {b} does not divide matrix size {n}")
    tiles = [
        [np.ascontiguousarray(a[i * b : (i + 1) * b, j * b : (j + 1) * b], dtype=np.float64)
         for j in range(n // b)]
        for i in range(n // b)
    ]
    return TiledMatrix(n, b, tiles)


def assemble(m: TiledMatrix) -> np.ndarray:
    """Paste the tile grid back into one dense array."""
    return np.block(m.tiles)


def lower_tiles_to_matrix(n: int, b: int, tiles: dict) -> TiledMatrix:
    """Build a factor grid from a {(i, j): tile} map of lower tiles.

    Missing upper-triangle entries share one zero tile; used by every
    driver to assemble its result.
    """
    p = n // b
    zero = np.zeros((b, b))
    grid = [[tiles[(i, j)] if i >= j else zero for j in range(p)] for i in range(p)]
    return TiledMatrix(n, b, grid)


def serial_tiled_cholesky(m: TiledMatrix) -> TiledMatrix:
    """The uncoordinated reference driver (and timing baseline).

    Loop order: factor the (k, k) tile, solve the k-th column panel, then
    fold rank-b updates into the trailing submatrix, k ascending.  Numeric
    failures carry the (k, i, j) tile coordinates.
    """
    p, b = m.p, m.b
    work = [[m.tiles[i][j].copy() if i >= j else None for j in range(p)] for i in range(p)]
    out = {}
    for k in range(p):
        try:
            out[(k, k)] = potrf_tile(work[k][k])
        except NumericError as exc:
            exc.location = (k, k, k)
            raise
        for i in range(k + 1, p):
            try:
                out[(i, k)] = trsm_tile(out[(k, k)], work[i][k])
            except NumericError as exc:
                exc.location = (k, i, k)
                raise
        for j in range(k + 1, p):
            for i in range(j, p):
                work[i][j] = update_tile(work[i][j], out[(i, k)], out[(j, k)])
    return lower_tiles_to_matrix(m.n, b, out)


def gen_spd(n: int, seed: int) -> np.ndarray:
    """A reproducible, exactly symmetric, well-conditioned SPD matrix.

    M M^T is positive semi-definite; adding n on the diagonal makes it
    comfortably positive definite.  The product is re-symmetrised from its
    lower triangle because BLAS does not promise bitwise symmetry.
    """
    rng = np.random.default_rng(seed)
    m = rng.random((n, n))
    a = m @ m.T
    a = np.tril(a) + np.tril(a, -1).T
    a[np.diag_indices(n)] += float(n)
    return a


def residual(a: np.ndarray, l: np.ndarray) -> float:
    """Relative factorisation residual ||A - L L^T||_F / ||A||_F."""
    return float(np.linalg.norm(a - l @ l.T) / np.linalg.norm(a))


def write_matrix(path, a: np.ndarray) -> None:
    """Write a square float64 matrix: magic, u64 size, row-major LE payload."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sQ", _MAGIC, a.shape[0]))
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != _MAGIC:
            raise ValueError(f"{path}: not a TCHO matrix file")
        (n,) = struct.unpack("<Q", head[4:])
        payload = fh.read()
    want = n * n * 8
    if len(payload) != want:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {want}")
    return np.frombuffer(payload, dtype="<f8").reshape(n, n).copy()

"""Pure-Python tile kernels: the fallback twin of the compiled extension.

These are deliberately plain triple-loop kernels (no BLAS) so the serial
reference and every coordinated implementation pay the same per-tile cost.
The loop structure and accumulation order are *identical* to the C versions
in ``_ckern.pyx``, and the extension is compiled without FP contraction,
so the two backends produce bit-identical results.  Python floats are IEEE
binary64, like C doubles, which makes that equivalence exact rather than
approximate.
"""

import math

import numpy as np

from ..errors import NumericError


def potrf(a):
    """Factor a symmetric positive-definite tile: returns lower L with L·Lᵀ = a.

    Only the lower triangle of ``a`` is read.  Strict upper entries of the
    result are exact zeros.
    """
    n = a.shape[0]
    src = a.tolist()
    out = [[0.0] * n for _ in range(n)]
    for j in range(n):
        oj = out[j]
        acc = src[j][j]
        for t in range(j):
            v = oj[t]
            acc -= v * v
        if acc <= 0.0:
            raise NumericError(
                f"matrix not positive definite: pivot {j} -> {acc}", pivot_index=j
            )
        d = math.sqrt(acc)
        oj[j] = d
        for i in range(j + 1, n):
            oi = out[i]
            acc = src[i][j]
            for t in range(j):
                acc -= oi[t] * oj[t]
            oi[j] = acc / d
    return np.array(out, dtype=np.float64)


def trsm(l_kk, a_jk):
    """Solve X·L_kkᵀ = a_jk by forward substitution along each row of a_jk."""
    n = a_jk.shape[0]
    lo = l_kk.tolist()
    src = a_jk.tolist()
    out = [[0.0] * n for _ in range(n)]
    for c in range(n):
        if lo[c][c] == 0.0:
            raise NumericError(f"zero diagonal at {c} in triangular solve", pivot_index=c)
    for r in range(n):
        orow = out[r]
        srow = src[r]
        for c in range(n):
            lc = lo[c]
            acc = srow[c]
            for t in range(c):
                acc -= orow[t] * lc[t]
            orow[c] = acc / lc[c]
    return np.array(out, dtype=np.float64)


def update(a_ij, l_ik, l_jk):
    """Rank update a_ij − l_ik·l_jkᵀ, computed over the full tile."""
    n = a_ij.shape[0]
    src = a_ij.tolist()
    li = l_ik.tolist()
    lj = l_jk.tolist()
    out = [[0.0] * n for _ in range(n)]
    for r in range(n):
        orow = out[r]
        srow = src[r]
        lir = li[r]
        for c in range(n):
            ljc = lj[c]
            acc = srow[c]
            for t in range(n):
                acc -= lir[t] * ljc[t]
            orow[c] = acc
    return np.array(out, dtype=np.float64)

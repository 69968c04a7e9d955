# Compiled tile kernels.  Plain triple loops, same accumulation order as
# kernels/pure.py; built with -ffp-contract=off so results are bit-identical
# to the pure backend.  All hot loops run with the GIL released, which is
# what lets the thread-pool runtimes scale on real hardware.

from libc.math cimport sqrt

import numpy as np

from ..errors import NumericError


def potrf(double[:, ::1] a):
    cdef Py_ssize_t n = a.shape[0]
    out_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t
    cdef double acc, v, d
    cdef Py_ssize_t bad = -1
    cdef double bad_val = 0.0
    with nogil:
        for j in range(n):
            acc = a[j, j]
            for t in range(j):
                v = out[j, t]
                acc -= v * v
            if acc <= 0.0:
                bad = j
                bad_val = acc
                break
            d = sqrt(acc)
            out[j, j] = d
            for i in range(j + 1, n):
                acc = a[i, j]
                for t in range(j):
                    acc -= out[i, t] * out[j, t]
                out[i, j] = acc / d
    if bad >= 0:
        raise NumericError(
            f"matrix not positive definite: pivot {bad} -> {bad_val}", pivot_index=bad
        )
    return out_arr


def trsm(double[:, ::1] l_kk, double[:, ::1] a_jk):
    cdef Py_ssize_t n = a_jk.shape[0]
    out_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, t
    cdef double acc
    cdef Py_ssize_t bad = -1
    with nogil:
        for c in range(n):
            if l_kk[c, c] == 0.0:
                bad = c
                break
        if bad < 0:
            for r in range(n):
                for c in range(n):
                    acc = a_jk[r, c]
                    for t in range(c):
                        acc -= out[r, t] * l_kk[c, t]
                    out[r, c] = acc / l_kk[c, c]
    if bad >= 0:
        raise NumericError(f"zero diagonal at {bad} in triangular solve", pivot_index=bad)
    return out_arr


def update(double[:, ::1] a_ij, double[:, ::1] l_ik, double[:, ::1] l_jk):
    cdef Py_ssize_t n = a_ij.shape[0]
    out_arr = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, t
    cdef double acc
    with nogil:
        for r in range(n):
            for c in range(n):
                acc = a_ij[r, c]
                for t in range(n):
                    acc -= l_ik[r, t] * l_jk[c, t]
                out[r, c] = acc
    return out_arr

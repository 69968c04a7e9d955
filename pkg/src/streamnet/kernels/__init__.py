"""Tile kernels with a compiled core and a pure-Python fallback.

The backend is selected at import: the Cython extension when it built,
otherwise the pure-Python twin.  ``STREAMNET_KERNELS=pure|compiled`` forces
a choice, and :func:`set_backend` switches at runtime (do this between
runs, not during one).  Both backends implement the same plain triple-loop
algorithms in the same operation order and produce bit-identical tiles;
``benchmarks/backend_compare.py`` measures the gap between them.
"""

import os

import numpy as np

from . import pure

try:
    from . import _ckern
except ImportError:  # extension not built; fall back to pure Python
    _ckern = None

_BACKENDS = {"pure": pure}
if _ckern is not None:
    _BACKENDS["compiled"] = _ckern

_active_name = os.environ.get("STREAMNET_KERNELS", "compiled" if _ckern else "pure")
if _active_name not in _BACKENDS:
    raise ImportError(
        f"STREAMNET_KERNELS={_active_name!r} requested but that backend is unavailable"
    )
_active = _BACKENDS[_active_name]


def available_backends():
    return sorted(_BACKENDS)


def get_backend() -> str:
    return _active_name


def set_backend(name: str) -> str:
    """Select the kernel backend by name; returns the previously active one."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r} (have {available_backends()})")
    previous = _active_name
    _active_name = name
    _active = _BACKENDS[name]
    return previous


def _as_tile(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def potrf_tile(a):
    """Lower Cholesky factor of one symmetric positive-definite tile."""
    return _active.potrf(_as_tile(a))


def trsm_tile(l_kk, a_jk):
    """Solve L_jk·L_kkᵀ = a_jk for L_jk."""
    return _active.trsm(_as_tile(l_kk), _as_tile(a_jk))


def update_tile(a_ij, l_ik, l_jk):
    """a_ij − l_ik·l_jkᵀ."""
    return _active.update(_as_tile(a_ij), _as_tile(l_ik), _as_tile(l_jk))


def dense_cholesky(a):
    """Unblocked lower Cholesky factor of a dense matrix (the b = N case).

    Serves as the independent oracle for the tiled drivers.
    """
    return _active.potrf(_as_tile(a))

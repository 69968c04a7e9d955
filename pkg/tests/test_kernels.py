"""Tile kernel oracles, backend parity, and pivot failure reporting."""

import math

import numpy as np
import pytest

from streamnet.errors import NumericError
from streamnet.kernels import (
    available_backends,
    dense_cholesky,
    get_backend,
    potrf_tile,
    set_backend,
    trsm_tile,
    update_tile,
)


@pytest.fixture(params=sorted({"pure", *available_backends()}))
def backend(request):
    previous = set_backend(request.param)
    yield request.param
    set_backend(previous)


def test_potrf_frozen_oracle(backend):
    l = potrf_tile(np.array([[4.0, 2.0], [2.0, 3.0]]))
    assert l[0, 0] == 2.0 and l[0, 1] == 0.0 and l[1, 0] == 1.0
    assert l[1, 1] == math.sqrt(2.0)


def test_potrf_identity(backend):
    eye = np.eye(5)
    assert np.array_equal(potrf_tile(eye), eye)


def test_potrf_reads_lower_only(backend):
    a = np.array([[4.0, 99.0], [2.0, 3.0]])  # upper junk ignored
    b = np.array([[4.0, 2.0], [2.0, 3.0]])
    assert np.array_equal(potrf_tile(a), potrf_tile(b))


def test_potrf_nonpositive_pivot(backend):
    with pytest.raises(NumericError) as exc:
        potrf_tile(np.array([[-1.0]]))
    assert exc.value.pivot_index == 0


def test_potrf_pivot_index_reported(backend):
    a = np.eye(3)
    a[2, 2] = -5.0
    with pytest.raises(NumericError) as exc:
        potrf_tile(a)
    assert exc.value.pivot_index == 2


def test_trsm_identity_solve(backend):
    x = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(trsm_tile(np.eye(3), x), x)


def test_trsm_reconstructs(backend):
    l_kk = np.array([[2.0, 0.0], [1.0, math.sqrt(2.0)]])
    a_jk = np.array([[2.0, 1.0], [4.0, 2.0]])
    l_jk = trsm_tile(l_kk, a_jk)
    assert np.allclose(l_jk @ l_kk.T, a_jk, atol=1e-14)


def test_trsm_zero_rhs(backend):
    l_kk = np.array([[2.0, 0.0], [1.0, 3.0]])
    assert np.array_equal(trsm_tile(l_kk, np.zeros((2, 2))), np.zeros((2, 2)))


def test_trsm_zero_diagonal(backend):
    with pytest.raises(NumericError):
        trsm_tile(np.array([[0.0, 0.0], [1.0, 1.0]]), np.ones((2, 2)))


def test_update_zero_l(backend):
    a = np.arange(4.0).reshape(2, 2)
    assert np.array_equal(update_tile(a, np.zeros((2, 2)), np.zeros((2, 2))), a)


def test_update_identity(backend):
    a = np.arange(4.0).reshape(2, 2)
    assert np.array_equal(update_tile(a, np.eye(2), np.eye(2)), a - np.eye(2))


def test_update_against_matmul_oracle(backend):
    rng = np.random.default_rng(11)
    a = rng.random((2, 2))
    lik = rng.random((2, 2))
    ljk = rng.random((2, 2))
    got = update_tile(a, lik, ljk)
    want = np.array(
        [
            [a[i][j] - sum(lik[i][m] * ljk[j][m] for m in range(2)) for j in range(2)]
            for i in range(2)
        ]
    )
    assert np.allclose(got, want, atol=1e-15)


def test_dense_cholesky_small(backend):
    a = np.array([[4.0, 2.0], [2.0, 3.0]])
    l = dense_cholesky(a)
    assert np.allclose(l @ l.T, a, atol=1e-14)
    with pytest.raises(NumericError):
        dense_cholesky(np.array([[-1.0]]))


def test_strict_upper_zeros_exact(backend):
    rng = np.random.default_rng(3)
    m = rng.random((6, 6))
    a = m @ m.T + 6 * np.eye(6)
    l = potrf_tile(a)
    assert np.array_equal(np.triu(l, 1), np.zeros((6, 6)))


@pytest.mark.skipif(len(available_backends()) < 2, reason="compiled extension not built")
def test_backends_bitwise_identical():
    """Both backends run the same scalar op sequence; results must agree
    to the bit, which is what makes the parallel drivers' checksums match
    regardless of which backend is active."""
    rng = np.random.default_rng(7)
    m = rng.random((16, 16))
    a = m @ m.T + 16 * np.eye(16)
    rhs = rng.random((16, 16))
    vals = {}
    for name in available_backends():
        prev = set_backend(name)
        try:
            l = potrf_tile(a)
            vals[name] = (l, trsm_tile(l, rhs), update_tile(a, l, l))
        finally:
            set_backend(prev)
    names = sorted(vals)
    for x, y in zip(vals[names[0]], vals[names[1]]):
        assert np.array_equal(x.view(np.uint64), y.view(np.uint64))


def test_env_override_reported():
    assert get_backend() in available_backends()

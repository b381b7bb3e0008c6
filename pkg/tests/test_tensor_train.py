import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowrank_thb.tensor_train import (TTMatrix, TTVector, tt_add, tt_dot, tt_from_dense, tt_norm,
                                      tt_ones, tt_rank1, tt_round, tt_scale, tt_to_dense, tt_vec,
                                      tt_zeros, ttm_apply, ttm_diag, ttm_from_kron, ttm_identity,
                                      ttm_matmul, ttm_transpose)

from conftest import random_tt

modes_st = st.lists(st.integers(1, 6), min_size=2, max_size=3)
seed_st = st.integers(0, 2**32 - 1)


def random_ttm(rng, rows, cols, rmax):
    ranks = [1] + [int(rng.integers(1, rmax + 1)) for _ in rows[1:]] + [1]
    return TTMatrix([rng.standard_normal((ranks[d], m, n, ranks[d + 1]))
                     for d, (m, n) in enumerate(zip(rows, cols))])


def kron_le(mats):
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(m, out)
    return out


# ---------------------------------------------------------------- construction

def test_ones_tensor_is_rank_one():
    x = tt_from_dense(np.ones((4, 4, 4)), 1e-12)
    assert x.ranks == (1, 1, 1, 1)


def test_sum_of_indices_has_rank_two():
    i = np.indices((4, 5, 6)).sum(axis=0).astype(float)
    x = tt_from_dense(i, 1e-12)
    assert x.ranks == (1, 2, 2, 1)
    assert np.allclose(tt_to_dense(x), i, atol=1e-12)


def test_random_exact_roundtrip():
    t = np.random.default_rng(0).standard_normal((5, 6, 7))
    err = np.linalg.norm(tt_to_dense(tt_from_dense(t, 0.0)) - t) / np.linalg.norm(t)
    assert err <= 1e-13


def test_zero_size_mode_rejected():
    with pytest.raises(ValueError):
        tt_from_dense(np.ones((3, 0, 2)))


def test_invalid_chain_rejected():
    with pytest.raises(ValueError):
        TTVector([np.ones((1, 2, 2)), np.ones((3, 2, 1))])
    with pytest.raises(ValueError):
        TTVector([np.ones((2, 2, 1))])


def test_dense_cap_reports_size():
    with pytest.raises(ValueError, match="cap"):
        tt_to_dense(tt_ones((10, 10, 10)), max_entries=100)


def test_cores_are_read_only():
    x = tt_ones((2, 3))
    with pytest.raises(ValueError):
        x.cores[0][0, 0, 0] = 5.0


def test_little_endian_vectorization():
    t = np.arange(24.0).reshape(2, 3, 4)
    assert np.array_equal(tt_vec(tt_from_dense(t)).round(10), t.ravel(order="F"))


@settings(max_examples=100, deadline=None)
@given(modes_st, st.sampled_from([0.0, 1e-8, 1e-4]), seed_st)
def test_roundtrip_bound(modes, eps, seed):
    t = np.random.default_rng(seed).standard_normal(modes)
    err = np.linalg.norm(tt_to_dense(tt_from_dense(t, eps)) - t)
    assert err <= max(eps, 1e-13) * np.linalg.norm(t) * (1 + 1e-10)


# ---------------------------------------------------------------- rounding

@settings(max_examples=100, deadline=None)
@given(modes_st, st.integers(1, 8), st.sampled_from([1e-12, 1e-6, 1e-3, 1e-1]), seed_st)
def test_rounding_bound(modes, rmax, eps, seed):
    x = random_tt(np.random.default_rng(seed), modes, rmax)
    y = tt_round(x, eps)
    X = tt_to_dense(x)
    assert np.linalg.norm(tt_to_dense(y) - X) <= eps * np.linalg.norm(X) * (1 + 1e-8) + 1e-14
    assert all(a <= b for a, b in zip(y.ranks, x.ranks))


def test_round_collinear_sum():
    x = tt_rank1([np.arange(1.0, 4), np.ones(2), np.array([1.0, -1.0])])
    y = tt_round(tt_add(x, x), 1e-12)
    assert y.ranks == (1, 1, 1, 1)
    assert np.allclose(tt_to_dense(y), 2 * tt_to_dense(x))


def test_round_rmax_matches_best_rank_one():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 6))
    y = tt_round(tt_from_dense(A), 0.0, rmax=1)
    u, s, vt = np.linalg.svd(A)
    assert y.ranks == (1, 1, 1)
    assert np.allclose(tt_to_dense(y), s[0] * np.outer(u[:, 0], vt[0]))


def test_round_random_dense_comparison():
    x = tt_from_dense(np.random.default_rng(1).standard_normal((4, 4, 4)), 0)
    X = tt_to_dense(x)
    assert np.linalg.norm(tt_to_dense(tt_round(x, 1e-10)) - X) <= 1e-10 * np.linalg.norm(X)


# ---------------------------------------------------------------- arithmetic

@settings(max_examples=100, deadline=None)
@given(modes_st, st.floats(-3, 3), st.floats(-3, 3), seed_st)
def test_linearity(modes, a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = random_tt(rng, modes, 4), random_tt(rng, modes, 4)
    z = tt_add(tt_scale(x, a), tt_scale(y, b))
    ref = a * tt_to_dense(x) + b * tt_to_dense(y)
    assert np.allclose(tt_to_dense(z), ref, atol=1e-12 * (1 + np.abs(ref).max()))
    assert z.ranks[1:-1] == tuple(r + s for r, s in zip(x.ranks[1:-1], y.ranks[1:-1]))


def test_add_zero_and_rank_bookkeeping():
    x = tt_rank1([np.ones(2), np.arange(3.0), np.ones(4)])
    assert np.array_equal(tt_to_dense(tt_add(x, tt_zeros((2, 3, 4)))), tt_to_dense(x))
    assert tt_add(x, x).ranks == (1, 2, 2, 1)
    with pytest.raises(ValueError):
        tt_add(x, tt_ones((2, 3, 5)))


@settings(max_examples=100, deadline=None)
@given(modes_st, seed_st)
def test_dot_matches_dense(modes, seed):
    rng = np.random.default_rng(seed)
    x, y = random_tt(rng, modes, 8), random_tt(rng, modes, 8)
    ref = float(np.sum(tt_to_dense(x) * tt_to_dense(y)))
    assert abs(tt_dot(x, y) - ref) <= 1e-12 * max(1.0, tt_norm(x) * tt_norm(y))
    assert tt_dot(x, x) >= 0
    assert np.isclose(tt_norm(x), np.sqrt(tt_dot(x, x)))


def test_dot_ones():
    assert tt_dot(tt_ones((3, 3, 3)), tt_ones((3, 3, 3))) == 27.0


# ---------------------------------------------------------------- operators

def test_kron_identity_and_scalars():
    I = ttm_from_kron([np.eye(2), np.eye(3), np.eye(4)])
    assert np.array_equal(tt_to_dense(I), np.eye(24))
    s = ttm_from_kron([np.array([[2.0]]), np.array([[3.0]]), np.array([[4.0]])])
    assert tt_to_dense(s)[0, 0] == 24.0


def test_kron_little_endian():
    rng = np.random.default_rng(5)
    fs = [rng.standard_normal((2, 3)), rng.standard_normal((3, 2)), rng.standard_normal((2, 2))]
    assert np.allclose(tt_to_dense(ttm_from_kron(fs)), kron_le(fs))


def test_identity_2x2():
    assert np.array_equal(tt_to_dense(ttm_identity((2,))), np.eye(2))


@settings(max_examples=100, deadline=None)
@given(modes_st, seed_st)
def test_apply_matches_dense(modes, seed):
    rng = np.random.default_rng(seed)
    rows = [int(rng.integers(1, 5)) for _ in modes]
    A = random_ttm(rng, rows, modes, 4)
    x = random_tt(rng, modes, 4)
    y = ttm_apply(A, x)
    assert y.mode_sizes == tuple(rows)
    assert y.ranks == tuple(a * b for a, b in zip(A.ranks, x.ranks))
    assert np.allclose(tt_vec(y), tt_to_dense(A) @ tt_vec(x))


@settings(max_examples=100, deadline=None)
@given(modes_st, seed_st)
def test_matmul_matches_dense(modes, seed):
    rng = np.random.default_rng(seed)
    rows = [int(rng.integers(1, 4)) for _ in modes]
    cols = [int(rng.integers(1, 4)) for _ in modes]
    A = random_ttm(rng, rows, modes, 3)
    B = random_ttm(rng, modes, cols, 3)
    assert np.allclose(tt_to_dense(ttm_matmul(A, B)), tt_to_dense(A) @ tt_to_dense(B))


@settings(max_examples=100, deadline=None)
@given(modes_st, seed_st)
def test_mixed_product(modes, seed):
    rng = np.random.default_rng(seed)
    A = [rng.standard_normal((n, n)) for n in modes]
    B = [rng.standard_normal((n, 2)) for n in modes]
    u = [rng.standard_normal(n) for n in modes]
    AB = ttm_matmul(ttm_from_kron(A), ttm_from_kron(B))
    assert set(AB.ranks) == {1}
    for c, a, b in zip(AB.cores, A, B):
        assert np.allclose(c[0, :, :, 0], a @ b, rtol=0, atol=1e-13 * (1 + np.abs(a @ b).max()))
    Au = ttm_apply(ttm_from_kron(A), tt_rank1(u))
    assert set(Au.ranks) == {1}
    for c, a, v in zip(Au.cores, A, u):
        assert np.allclose(c[0, :, 0], a @ v, rtol=0, atol=1e-13 * (1 + np.abs(a @ v).max()))


@settings(max_examples=100, deadline=None)
@given(modes_st, seed_st)
def test_diag_matches_dense(modes, seed):
    rng = np.random.default_rng(seed)
    A = random_ttm(rng, modes, modes, 4)
    assert np.allclose(tt_vec(ttm_diag(A)), np.diag(tt_to_dense(A)))


def test_diag_identity_and_kron():
    assert np.array_equal(tt_to_dense(ttm_diag(ttm_identity((2, 3)))), np.ones((2, 3)))
    rng = np.random.default_rng(9)
    fs = [rng.standard_normal((n, n)) for n in (2, 3, 2)]
    assert np.allclose(tt_vec(ttm_diag(ttm_from_kron(fs))), kron_le([np.diag(f) for f in fs]))
    with pytest.raises(ValueError):
        ttm_diag(ttm_from_kron([np.ones((2, 3))]))


def test_transpose_and_identity_apply():
    rng = np.random.default_rng(2)
    A = random_ttm(rng, (2, 3, 4), (3, 2, 2), 3)
    assert np.allclose(tt_to_dense(ttm_transpose(A)), tt_to_dense(A).T)
    x = random_tt(rng, (2, 3, 4), 3)
    assert np.allclose(tt_to_dense(ttm_apply(ttm_identity((2, 3, 4)), x)), tt_to_dense(x))
    assert np.allclose(tt_to_dense(ttm_matmul(A, ttm_identity((3, 2, 2)))), tt_to_dense(A))


def test_apply_size_mismatch():
    with pytest.raises(ValueError):
        ttm_apply(ttm_identity((2, 3)), tt_ones((3, 3)))
    with pytest.raises(ValueError):
        ttm_matmul(ttm_identity((2, 3)), ttm_identity((3, 3)))

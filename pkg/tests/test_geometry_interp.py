from itertools import product

import numpy as np
import pytest

from lowrank_thb.cli import manufactured_problem
from lowrank_thb.geometry_interp import (GeometryMap, eval_map, identity_map,
                                         interpolate_field, interpolate_source,
                                         interpolate_weight_and_metric, jacobian, sample_grid,
                                         uniform_space, weight_space, weight_terms)
from lowrank_thb.tensor_train import tt_to_dense


def trilinear(seed, amp=0.08):
    rng = np.random.default_rng(seed)
    g = identity_map(3)
    return GeometryMap(g.knots, g.control_points + amp * rng.uniform(-1, 1, g.control_points.shape))


def direct_trilinear(g, x):
    out = np.zeros((x.shape[0], 3))
    for c in product((0, 1), repeat=3):
        w = np.prod([x[:, d] if c[d] else 1 - x[:, d] for d in range(3)], axis=0)
        out += w[:, None] * g.control_points[c]
    return out


def test_identity_and_affine_maps():
    x = np.random.default_rng(0).random((20, 3))
    assert np.abs(eval_map(identity_map(3), x) - x).max() <= 1e-14
    y = eval_map(identity_map(3, (2, 1, 1)), x)
    assert np.allclose(y, x * [2, 1, 1], atol=1e-14)


def test_random_trilinear_matches_direct_sum():
    g = trilinear(1)
    x = np.random.default_rng(1).random((50, 3))
    assert np.allclose(eval_map(g, x), direct_trilinear(g, x), atol=1e-14)


def test_weight_terms_closed_forms():
    x = np.random.default_rng(2).random((10, 3))
    om, Q = weight_terms(identity_map(3), x)
    assert np.allclose(om, 1) and np.allclose(Q, np.eye(3))
    om, Q = weight_terms(identity_map(3, (2, 1, 1)), x)
    assert np.allclose(om, 2) and np.allclose(Q, np.diag([0.5, 2, 2]))


def test_jacobian_finite_differences():
    g = trilinear(3)
    x = np.random.default_rng(3).uniform(0.05, 0.95, (30, 3))
    h = 1e-6
    for b in range(3):
        e = np.zeros(3)
        e[b] = h
        fd = (eval_map(g, x + e) - eval_map(g, x - e)) / (2 * h)
        assert np.abs(jacobian(g, x)[:, :, b] - fd).max() <= 1e-5
    om, Q = weight_terms(g, x)
    assert np.allclose(Q, Q.transpose(0, 2, 1))
    assert np.all(np.linalg.eigvalsh(Q) > 0)


def test_singular_jacobian_rejected():
    g = identity_map(3, (1, 1, 0))
    with pytest.raises(ValueError, match="singular"):
        weight_terms(g, np.full((1, 3), 0.5))


def test_weight_space_matches_geometry_degree():
    ws = weight_space(identity_map(3))
    kv = ws.knots[0]
    assert kv.degree == 2 and kv.n == 4 and np.allclose(kv.knots, [0, 0, 0, 0.5, 1, 1, 1])


def test_constant_field_is_rank_one_ones():
    sp = uniform_space(2, 6)
    f = interpolate_field(lambda x: np.ones(len(x)), sp, 1e-12)
    assert set(f.coeff.ranks) == {1}
    assert np.allclose(tt_to_dense(f.coeff), 1)


def test_univariate_factor_interpolation():
    sp = uniform_space(3, 40)
    f = interpolate_field(lambda x: np.exp(-x[:, 0] ** 2), sp, 1e-10)
    assert f.coeff.ranks == (1, 1, 1, 1)
    x = np.random.default_rng(4).random((100, 3))
    assert np.abs(f(x) - np.exp(-x[:, 0] ** 2)).max() <= 1e-6


def test_identity_weights_and_metric():
    g = identity_map(3)
    w, q = interpolate_weight_and_metric(g, weight_space(g), 1e-12)
    x = np.random.default_rng(5).random((20, 3))
    assert np.allclose(w(x), 1)
    for k in range(3):
        for l in range(3):
            if k == l:
                assert np.allclose(q[k][l](x), 1)
            else:
                assert q[k][l].is_zero
                assert q[k][l] is q[l][k]


def test_affine_weights_and_metric():
    g = identity_map(3, (2, 1, 1))
    w, q = interpolate_weight_and_metric(g, weight_space(g), 1e-12)
    x = np.random.default_rng(6).random((20, 3))
    assert np.allclose(w(x), 2)
    for k, v in enumerate([0.5, 2, 2]):
        assert np.allclose(q[k][k](x), v)


def test_random_trilinear_weights():
    g = trilinear(7)
    tol = 1e-6
    space = uniform_space(3, 30)
    w, q = interpolate_weight_and_metric(g, space, tol)
    x = np.random.default_rng(7).random((50, 3))
    om, Q = weight_terms(g, x)
    assert np.abs(w(x) - om).max() <= 10 * tol * np.abs(om).max()
    for k in range(3):
        for l in range(3):
            assert np.abs(q[k][l](x) - Q[:, k, l]).max() <= 10 * tol * np.abs(Q).max()


def test_collocation_residual_at_nodes():
    space = uniform_space(2, 12)
    sampler = lambda x: np.sin(3 * x[:, 0]) * np.cos(x[:, 1] + x[:, 2]) + x[:, 2] ** 3
    tol = 1e-6
    f = interpolate_field(sampler, space, tol)
    S = sample_grid(sampler, space)
    grids = np.meshgrid(*space.nodes, indexing="ij")
    nodes = np.stack([gr.ravel() for gr in grids], axis=1)
    assert np.abs(f(nodes) - S.ravel()).max() <= tol * np.abs(S).max()


def test_exact_weight_on_trilinear_geometry():
    g = trilinear(8)
    w, _ = interpolate_weight_and_metric(g, weight_space(g), 1e-13)
    x = np.random.default_rng(8).random((50, 3))
    assert np.abs(w(x) - weight_terms(g, x)[0]).max() <= 1e-11


def test_source_fields():
    g = identity_map(3)
    sp = uniform_space(3, 10)
    assert interpolate_source(lambda y: np.zeros(len(y)), g, sp, 1e-8).is_zero
    one = interpolate_source(lambda y: np.ones(len(y)), g, sp, 1e-12)
    assert np.allclose(one(np.random.default_rng(0).random((10, 3))), 1)
    prob = manufactured_problem("sol1")
    f = interpolate_source(prob.f, g, uniform_space(3, 40), 1e-8)
    x = np.random.default_rng(9).random((200, 3))
    assert np.abs(f(x) - prob.f(x)).max() <= 1e-6


def test_sample_cap():
    with pytest.raises(ValueError, match="cap"):
        interpolate_field(lambda x: x[:, 0], uniform_space(1, 50), 1e-6, cap=1000)

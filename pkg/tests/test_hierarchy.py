from itertools import product

import numpy as np
import pytest

from lowrank_thb.cli import scheme_space
from lowrank_thb.hierarchy import (MultiIndexSet, activity_report, boundary_mask, build_space,
                                   classify_cells, classify_splines, spline_support,
                                   truncation_zero_set)
from lowrank_thb.oracle import thb_basis
from lowrank_thb.splines import basis_matrix

SCHEMES = [("slab", 3, 2, 6), ("nested-slab", 3, 3, 4), ("two-corners", 2, 3, 5),
           ("four-corners", 2, 3, 5), ("two-corners", 3, 2, 7)]


def nested_blocks_space():
    """2D, three levels: a block refined at level 0, a sub-block of it at level 1."""
    m0 = np.zeros((6, 6), dtype=bool)
    m0[0:4, 0:3] = True
    m1 = np.zeros((12, 12), dtype=bool)
    m1[0:4, 0:4] = True
    return build_space((2, 2), (6, 6), [m0, m1])


def brute_inside(space, level, region):
    out = np.zeros(space.levels[level].nbasis, dtype=bool)
    for idx in product(*(range(n) for n in out.shape)):
        box = tuple(slice(a, b + 1) for a, b in spline_support(space, level, idx))
        out[idx] = region[box].all()
    return out


def test_single_level():
    s = build_space((2, 2, 2), (3, 3, 3))
    act, non = classify_cells(s, 0)
    assert len(act) == 27 and len(non) == 0
    a, d, n = classify_splines(s, 0)
    assert len(d) == 0
    assert a.mask[1:-1, 1:-1, 1:-1].all() and len(a) == 3 ** 3


def test_slab_active_fine_splines():
    s = scheme_space("slab", 3, 2, 6)
    assert s.domain_cells[1][:6].all() and not s.domain_cells[1][6:].any()
    inside = brute_inside(s, 1, s.domain_cells[1])
    assert np.array_equal(s.active_splines[1], inside & ~boundary_mask(s.levels[1].nbasis))
    idx = np.argwhere(s.active_splines[1])
    lo, hi = idx.min(axis=0), idx.max(axis=0)
    assert len(idx) == np.prod(hi - lo + 1)


def test_nested_blocks_nonactive_cells():
    s = nested_blocks_space()
    act, non = classify_cells(s, 1)
    deact = s.refined_cells[1]
    unselected = ~s.domain_cells[1]
    assert np.array_equal(non.mask, deact | unselected)
    assert len(act) + len(non) == 144


@pytest.mark.parametrize("case", SCHEMES + ["nested-blocks"])
def test_classification_invariants(case):
    s = nested_blocks_space() if case == "nested-blocks" else scheme_space(*case)
    vol = sum(a.sum() / np.prod(s.levels[l].cells) for l, a in enumerate(s.active_cells))
    assert abs(vol - 1) <= 1e-12
    for l in range(s.L):
        a, d, n = classify_splines(s, l)
        total = a.mask.astype(int) + d.mask + n.mask
        assert total.max() == 1 and total.min() == 1
        assert not (a.mask & ~s.support_intersects(l, s.active_cells[l])).any()
        region = s.refined_cells[l] if l < s.L - 1 else np.zeros(s.levels[l].cells, dtype=bool)
        assert np.array_equal(d.mask, brute_inside(s, l, region) & brute_inside(s, l, s.domain_cells[l]))
        if l > 0:
            assert np.array_equal(truncation_zero_set(s, l - 1).mask,
                                  brute_inside(s, l, s.domain_cells[l]))


def test_dof_count_matches_oracle():
    s = scheme_space("two-corners", 2, 3, 5)
    b = thb_basis(s)
    assert s.ndofs() == int(b.is_dof.sum())
    assert s.nthb() == b.nfuncs


def test_truncation_zero_edge_cases():
    full = build_space((2, 2), (3, 3), [np.ones((3, 3), dtype=bool)])
    assert truncation_zero_set(full, 0).mask.all()
    s = build_space((2, 2), (4, 4), [[(0, 0)]])
    # one refined corner cell: only the clamped corner splines fit inside it
    z = truncation_zero_set(s, 0)
    assert len(z) == 4 and z.mask[:2, :2].all()
    with pytest.raises(IndexError):
        truncation_zero_set(s, 1)


def test_spline_support_examples():
    s1 = build_space((1, 1, 1), (4, 4, 4))
    assert spline_support(s1, 0, (0, 0, 0)) == ((0, 0),) * 3
    s2 = build_space((2, 2, 2), (6, 6, 6))
    box = spline_support(s2, 0, (3, 3, 3))
    assert all(b - a + 1 == 3 for a, b in box)


def test_spline_support_matches_evaluation():
    s = build_space((2, 3), (5, 4))
    rng = np.random.default_rng(0)
    x = rng.random((400, 2))
    for _ in range(10):
        idx = tuple(int(rng.integers(0, n)) for n in s.levels[0].nbasis)
        v = np.prod([basis_matrix(kv, x[:, d])[:, idx[d]] for d, kv in enumerate(s.levels[0].knots)],
                    axis=0)
        box = spline_support(s, 0, idx)
        inside = np.all([(x[:, d] >= a / kv.m) & (x[:, d] <= (b + 1) / kv.m)
                         for d, ((a, b), kv) in enumerate(zip(box, s.levels[0].knots))], axis=0)
        assert np.all(v[~inside] == 0)


def test_non_nested_marks_rejected():
    m0 = np.zeros((4, 4), dtype=bool)
    m0[:2, :2] = True
    m1 = np.zeros((8, 8), dtype=bool)
    m1[6:, 6:] = True
    with pytest.raises(ValueError, match="level 1"):
        build_space((2, 2), (4, 4), [m0, m1])


def test_marks_as_index_list():
    s = build_space((1, 1), (2, 2), [[(0, 0)]])
    assert s.refined_cells[0].sum() == 1 and s.refined_cells[0][0, 0]
    with pytest.raises(ValueError):
        build_space((1, 1), (2, 2), [[(2, 0)]])


def test_text_dump():
    s = build_space((1, 1), (2, 2), [[(0, 0)]])
    text = activity_report(s)
    assert "# level 0 active_cells (3)" in text
    assert MultiIndexSet(s.active_cells[0]).to_text() == "1 0\n0 1\n1 1\n"

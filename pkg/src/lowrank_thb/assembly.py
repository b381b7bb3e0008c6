"""Low-rank Galerkin assembly of THB-spline systems in tensor-train format.

Per level, the basis is compacted by discarding spline slices without support
on active cells; operators are integrated over cuboids of active cells, coupled
through truncated two-scale operators and finally restricted to the active
DoFs either cuboid by cuboid (approach 1) or level by level with identity
masks on inactive indices (approach 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil
from typing import Sequence

import numpy as np

from .cuboids import CuboidPartition, IndexBox, SliceReduction, discard_slices, partition_pair
from .geometry_interp import SeparableField
from .hierarchy import HierarchicalSpace
from .splines import KnotVector, basis_matrix, gauss_on_spans, two_scale_matrix
from .tensor_train import (TTMatrix, TTVector, tt_add, tt_round, tt_to_dense, tt_vec,
                           tt_zeros, ttm_add, ttm_apply, ttm_from_kron, ttm_matmul, ttm_round,
                           ttm_scale, ttm_transpose, ttm_zeros)

ADDITIVE, SUBTRACTIVE = "additive", "subtractive"


# ---------------------------------------------------------------- univariate quadrature

class SpanQuadrature:
    """Gauss rule on the common refinement of a test basis and a weight basis."""

    def __init__(self, test: KnotVector, weight: KnotVector, nq: int | None = None):
        if nq is None:
            nq = ceil((2 * test.degree + weight.degree + 1) / 2)
        breaks = np.union1d(test.breakpoints, weight.breakpoints)
        x, w = gauss_on_spans(breaks, nq)
        mid = 0.5 * (breaks[:-1] + breaks[1:])
        cell = np.searchsorted(test.breakpoints, mid) - 1
        self.test, self.weight = test, weight
        self.cell = np.repeat(cell, nq)
        self.x, self.w = x.ravel(), w.ravel()
        self.B = (basis_matrix(test, self.x), basis_matrix(test, self.x, 1))
        self.W = basis_matrix(weight, self.x)

    def select(self, cells) -> np.ndarray:
        return np.isin(self.cell, np.asarray(cells, dtype=np.int64))

    def matrix_core(self, cells, core: np.ndarray, orders=(0, 0), rows=None) -> np.ndarray:
        """Core of shape (ra, n, n, rb): integrals of weight-core slices times basis pairs."""
        q = self.select(cells)
        rows = slice(None) if rows is None else rows
        A = self.B[orders[0]][q][:, rows]
        Bm = self.B[orders[1]][q][:, rows]
        wv = np.einsum("qn,anb->qab", self.W[q], core)
        return np.einsum("q,qab,qi,qj->aijb", self.w[q], wv, A, Bm, optimize=True)

    def vector_core(self, cells, core: np.ndarray, rows=None) -> np.ndarray:
        q = self.select(cells)
        rows = slice(None) if rows is None else rows
        A = self.B[0][q][:, rows]
        wv = np.einsum("qn,anb->qab", self.W[q], core)
        return np.einsum("q,qab,qi->aib", self.w[q], wv, A, optimize=True)


def spans_from_interval(kv: KnotVector, a: float, b: float) -> np.ndarray:
    """Cell indices covering [a, b]; both ends must be breakpoints."""
    br = kv.breakpoints
    ia, ib = np.searchsorted(br, [a, b])
    if ia >= len(br) or ib >= len(br) or not np.isclose(br[ia], a) or not np.isclose(br[ib], b):
        raise ValueError(f"interval [{a}, {b}] is not aligned to breakpoints")
    return np.arange(ia, ib)


def univariate_factor(test: KnotVector, wspace: KnotVector, wcore, spans, orders=(0, 0)):
    """Integral of (weight spline) * D^a beta_i * D^b beta_j over the given cells.

    Returns an n x n matrix, or a length-n vector when ``orders`` is None.
    """
    quad = SpanQuadrature(test, wspace)
    wcore = np.asarray(wcore, dtype=float)
    if wcore.shape != (wspace.n,):
        raise ValueError("weight coefficients do not match the weight space")
    core = wcore.reshape(1, -1, 1)
    if orders is None:
        return quad.vector_core(spans, core)[0, :, 0]
    return quad.matrix_core(spans, core, orders)[0, :, :, 0]


# ---------------------------------------------------------------- weights

@dataclass(frozen=True, eq=False)
class WeightFields:
    omega: SeparableField
    Q: tuple  # D x D nested tuples of SeparableField

    @classmethod
    def from_fields(cls, omega, Q):
        return cls(omega, tuple(tuple(r) for r in Q))


# ---------------------------------------------------------------- level operators

@dataclass(frozen=True, eq=False)
class LevelOperator:
    op: TTMatrix
    reduction: SliceReduction  # reduced spline numbering
    cells: SliceReduction  # reduced cell numbering
    branch: str
    nterms: int


def level_reduction(space: HierarchicalSpace, level: int) -> SliceReduction:
    """Spline slices that touch an active cell of the level.

    Splines straddling the boundary of the level's region are kept as well:
    they carry the truncation chain from coarser to finer levels even where
    the region boundary is shared with the next one.
    """
    touched = space.support_intersects(level, space.active_cells[level])
    if level > 0:
        touched |= (space.support_intersects(level, space.domain_cells[level])
                    & ~space.truncation_zero[level - 1])
    if not touched.any():
        touched = np.ones_like(touched)
    return discard_slices(touched)[0]


def _quads(space: HierarchicalSpace, level: int, field_space, cache: dict | None = None):
    key = ("quad", level, id(field_space))
    if cache is not None and key in cache:
        return cache[key]
    qs = [SpanQuadrature(t, w) for t, w in zip(space.levels[level].knots, field_space.knots)]
    if cache is not None:
        cache[key] = qs
    return qs


def _box_cells(cells: SliceReduction, box: IndexBox | None):
    if box is None:
        return cells.keep
    return tuple(k[r] for k, r in zip(cells.keep, box.ranges()))


def _cuboid_matrix(quads, cellsets, rows, kind, weights: WeightFields, tol) -> TTMatrix:
    D = len(quads)
    terms = []
    if kind == "mass":
        fields = [((0,) * D, (0,) * D, weights.omega)]
    elif kind == "stiffness":
        fields = []
        for k in range(D):
            for l in range(D):
                fld = weights.Q[k][l]
                if fld.is_zero:
                    continue
                a = tuple(int(d == k) for d in range(D))
                b = tuple(int(d == l) for d in range(D))
                fields.append((a, b, fld))
    else:
        raise ValueError(f"unknown operator kind {kind!r}")
    for a, b, fld in fields:
        cores = [quads[d].matrix_core(cellsets[d], fld.coeff.cores[d], (a[d], b[d]), rows[d])
                 for d in range(D)]
        terms.append(TTMatrix(cores))
    if not terms:
        n = tuple(len(r) for r in rows)
        return ttm_zeros(n, n)
    acc = terms[0]
    for t in terms[1:]:
        acc = ttm_add(acc, t)
    return ttm_round(acc, tol)


def _choose(n_in: int, n_out: int, branch: str | None) -> str:
    if branch is not None:
        return branch
    return ADDITIVE if n_in <= n_out + 1 else SUBTRACTIVE


def _accumulate(full, boxes: CuboidPartition, make, branch, tol):
    """Additive: sum over boxes; subtractive: full term minus boxes."""
    acc = full() if branch == SUBTRACTIVE else None
    sign = -1.0 if branch == SUBTRACTIVE else 1.0
    for box in boxes:
        t = make(box)
        t = t if sign > 0 else _neg(t)
        acc = t if acc is None else _round(_plus(acc, t), tol)
    return acc


def _neg(t):
    return ttm_scale(t, -1.0) if isinstance(t, TTMatrix) else TTVector([-t.cores[0], *t.cores[1:]])


def _plus(a, b):
    return ttm_add(a, b) if isinstance(a, TTMatrix) else tt_add(a, b)


def _round(a, tol):
    return ttm_round(a, tol) if isinstance(a, TTMatrix) else tt_round(a, tol)


def level_operator(space: HierarchicalSpace, level: int, kind: str, weights: WeightFields,
                   tol: float, branch: str | None = None, cache: dict | None = None) -> LevelOperator:
    """Mass or stiffness matrix of one level, integrated over its active cells only."""
    red = level_reduction(space, level)
    cred, cmask = discard_slices(space.active_cells[level])
    inside, outside = partition_pair(cmask)
    br = _choose(len(inside), len(outside), branch)
    quads = _quads(space, level, weights.omega.space, cache)
    rows = red.keep

    def make(box):
        return _cuboid_matrix(quads, _box_cells(cred, box), rows, kind, weights, tol)

    boxes = inside if br == ADDITIVE else outside
    op = _accumulate(lambda: make(None), boxes, make, br, tol)
    if op is None:
        n = red.new_dims
        op = ttm_zeros(n, n)
    return LevelOperator(op, red, cred, br, len(boxes) + (br == SUBTRACTIVE))


def level_rhs(space: HierarchicalSpace, level: int, source: SeparableField, tol: float,
              branch: str | None = None, reduction: SliceReduction | None = None,
              cache: dict | None = None) -> TTVector:
    """Load vector of one level over its active cells, in the reduced numbering."""
    red = reduction or level_reduction(space, level)
    cred, cmask = discard_slices(space.active_cells[level])
    inside, outside = partition_pair(cmask)
    br = _choose(len(inside), len(outside), branch)
    quads = _quads(space, level, source.space, cache)
    D = space.dim

    def make(box):
        cs = _box_cells(cred, box)
        return TTVector([quads[d].vector_core(cs[d], source.coeff.cores[d], red.keep[d])
                         for d in range(D)])

    if source.is_zero:
        return tt_zeros(red.new_dims)
    boxes = inside if br == ADDITIVE else outside
    out = _accumulate(lambda: make(None), boxes, make, br, tol)
    return tt_zeros(red.new_dims) if out is None else out


# ---------------------------------------------------------------- truncation

def truncation_tt(space: HierarchicalSpace, level: int, coarse: SliceReduction,
                  fine: SliceReduction, tol: float, branch: str | None = None) -> TTMatrix:
    """Truncated two-scale operator from level to level+1 in the reduced numberings."""
    if not 0 <= level < space.L - 1:
        raise IndexError("truncation needs a finer level")
    D = space.dim
    C = []
    for d in range(D):
        c = two_scale_matrix(space.levels[level].knots[d], space.levels[level + 1].knots[d])
        C.append(c[np.ix_(fine.keep[d], coarse.keep[d])])
    zero = fine.reduce(space.truncation_zero[level])
    kept, dropped = partition_pair(~zero)
    br = _choose(len(kept), len(dropped), branch)

    def make(box):
        fs = []
        for d in range(D):
            m = np.zeros_like(C[d])
            sl = box.slices[d]
            m[sl] = C[d][sl]
            fs.append(m)
        return ttm_from_kron(fs)

    boxes = kept if br == ADDITIVE else dropped
    op = _accumulate(lambda: ttm_from_kron(C), boxes, make, br, tol)
    if op is None:
        return ttm_zeros(fine.new_dims, coarse.new_dims)
    return op


# ---------------------------------------------------------------- coupled blocks

@dataclass(eq=False)
class Hierarchy:
    """Level operators, load vectors and truncations of one hierarchical space."""

    space: HierarchicalSpace
    ops: list
    rhs: list
    truncations: list
    tol: float
    _chains: dict = field(default_factory=dict)

    @property
    def reductions(self):
        return [o.reduction for o in self.ops]

    def chain(self, lfrom: int, lto: int) -> TTMatrix | None:
        """Product of truncations from level lfrom up to lto (None for the identity)."""
        if lto == lfrom:
            return None
        key = (lfrom, lto)
        if key not in self._chains:
            prev = self.chain(lfrom, lto - 1)
            T = self.truncations[lto - 1]
            self._chains[key] = T if prev is None else ttm_round(ttm_matmul(T, prev), self.tol)
        return self._chains[key]


def build_hierarchy(space: HierarchicalSpace, weights: WeightFields, source: SeparableField | None,
                    tol: float, kind: str = "stiffness", branch: str | None = None,
                    trunc_branch: str | None = None) -> Hierarchy:
    cache: dict = {}
    ops = [level_operator(space, l, kind, weights, tol, branch, cache) for l in range(space.L)]
    rhs = []
    for l, o in enumerate(ops):
        if source is None:
            rhs.append(tt_zeros(o.reduction.new_dims))
        else:
            rhs.append(level_rhs(space, l, source, tol, branch, o.reduction, cache))
    truncs = [truncation_tt(space, l, ops[l].reduction, ops[l + 1].reduction, tol, trunc_branch)
              for l in range(space.L - 1)]
    return Hierarchy(space, ops, rhs, truncs, tol)


def coupled_block(h: Hierarchy, l: int, lp: int) -> TTMatrix:
    """Sum over k >= max(l, lp) of chain(l,k)^T M_k chain(lp,k)."""
    tol = h.tol
    acc = None
    for k in range(max(l, lp), h.space.L):
        A, B = h.chain(l, k), h.chain(lp, k)
        t = h.ops[k].op
        if B is not None:
            t = ttm_round(ttm_matmul(t, B), tol)
        if A is not None:
            t = ttm_round(ttm_matmul(ttm_transpose(A), t), tol)
        acc = t if acc is None else ttm_round(ttm_add(acc, t), tol)
    return acc


def coupled_rhs(h: Hierarchy, l: int) -> TTVector:
    tol = h.tol
    acc = None
    for k in range(l, h.space.L):
        A = h.chain(l, k)
        t = h.rhs[k] if A is None else tt_round(ttm_apply(ttm_transpose(A), h.rhs[k]), tol)
        acc = t if acc is None else tt_round(tt_add(acc, t), tol)
    return acc


# ---------------------------------------------------------------- selectors and global system

def selector_tt(box: IndexBox, positions: Sequence[np.ndarray], tilde_dims: Sequence[int],
                codomain: str = "local", hat_dims: Sequence[int] | None = None) -> TTMatrix:
    """0/1 rank-1 selector from box indices (in the active-DoF slice numbering) to the
    reduced level numbering.

    ``positions[d][j]`` is the reduced-level index of slice j. With a local codomain
    the columns enumerate the box; with a global one they enumerate all slices.
    """
    fs = []
    for d, r in enumerate(box.ranges()):
        if codomain == "local":
            J = np.zeros((tilde_dims[d], len(r)))
            J[positions[d][r], np.arange(len(r))] = 1.0
        elif codomain == "global":
            J = np.zeros((tilde_dims[d], hat_dims[d]))
            J[positions[d][r], r] = 1.0
        else:
            raise ValueError(f"unknown codomain {codomain!r}")
        fs.append(J)
    return ttm_from_kron(fs)


def mask_tt(box: IndexBox, dims: Sequence[int]) -> TTMatrix:
    fs = []
    for d, r in enumerate(box.ranges()):
        m = np.zeros((dims[d], dims[d]))
        m[r, r] = 1.0
        fs.append(m)
    return ttm_from_kron(fs)


@dataclass(frozen=True, eq=False)
class LevelDofs:
    """Active DoFs of a level in their own slice-compacted numbering."""

    level: int
    hat: SliceReduction
    positions: tuple  # hat slice -> reduced level index
    active: np.ndarray  # mask over hat grid
    inside: CuboidPartition
    outside: CuboidPartition


def level_dofs(space: HierarchicalSpace, level: int, tilde: SliceReduction) -> LevelDofs:
    hat, act = discard_slices(space.active_splines[level])
    pos = hat.positions(tilde)
    inside, outside = partition_pair(act)
    return LevelDofs(level, hat, pos, act, inside, outside)


@dataclass(frozen=True, eq=False)
class BlockSystem:
    approach: int
    blocks: tuple  # blocks[i][j] TTMatrix
    rhs: tuple
    index_maps: tuple  # per block: global DoF of each little-endian local index, -1 if masked
    block_levels: tuple
    ndofs: int

    @property
    def nblocks(self) -> int:
        return len(self.rhs)

    @property
    def block_sizes(self) -> tuple:
        return tuple(r.mode_sizes for r in self.rhs)

    def to_dense(self) -> np.ndarray:
        parts = [[tt_to_dense(b) for b in row] for row in self.blocks]
        return np.block(parts)

    def dense_dofs(self) -> np.ndarray:
        """Operator restricted to the true DoFs, in global DoF order."""
        A = self.to_dense()
        idx = np.concatenate(self.index_maps)
        sel = idx >= 0
        out = np.zeros((self.ndofs, self.ndofs))
        out[np.ix_(idx[sel], idx[sel])] = A[np.ix_(sel, sel)]
        return out

    def gather(self, blocks: Sequence[TTVector]) -> np.ndarray:
        """Global DoF vector from a list of block TT vectors."""
        out = np.zeros(self.ndofs)
        for v, idx in zip(blocks, self.index_maps):
            vals = tt_vec(v)
            sel = idx >= 0
            out[idx[sel]] = vals[sel]
        return out

    def rhs_dofs(self) -> np.ndarray:
        return self.gather(self.rhs)

    def report(self) -> str:
        lines = [f"approach {self.approach}: {self.nblocks} x {self.nblocks} blocks, {self.ndofs} dofs"]
        for i, row in enumerate(self.blocks):
            for j, b in enumerate(row):
                lines.append(f"block {i},{j} levels {self.block_levels[i]},{self.block_levels[j]} "
                             f"rows {b.row_sizes} cols {b.col_sizes} ranks {b.ranks}")
        for i, r in enumerate(self.rhs):
            lines.append(f"rhs {i} modes {r.mode_sizes} ranks {r.ranks}")
        return "\n".join(lines) + "\n"


def _box_map(space, ld: LevelDofs, box: IndexBox | None) -> np.ndarray:
    lookup = space.dof_lookup(ld.level)
    if box is None:
        idx = ld.hat.keep
    else:
        idx = tuple(k[r] for k, r in zip(ld.hat.keep, box.ranges()))
    return lookup[np.ix_(*idx)].ravel(order="F")


def global_system(h: Hierarchy, approach: int) -> BlockSystem:
    space, tol = h.space, h.tol
    L = space.L
    reds = h.reductions
    dofs = [level_dofs(space, l, reds[l]) for l in range(L)]
    coupled = {}
    for l in range(L):
        for lp in range(l, L):
            coupled[l, lp] = coupled_block(h, l, lp)
    frhs = [coupled_rhs(h, l) for l in range(L)]

    def Mt(l, lp):
        return coupled[l, lp] if l <= lp else ttm_transpose(coupled[lp, l])

    if approach == 1:
        entries = [(l, box) for l in range(L) for box in dofs[l].inside]
        sel = [selector_tt(box, dofs[l].positions, reds[l].new_dims) for l, box in entries]
        blocks = []
        for i, (l, _) in enumerate(entries):
            row = []
            for j, (lp, _) in enumerate(entries):
                if j < i:
                    row.append(ttm_transpose(blocks[j][i]))
                    continue
                t = ttm_round(ttm_matmul(Mt(l, lp), sel[j]), tol)
                row.append(ttm_round(ttm_matmul(ttm_transpose(sel[i]), t), tol))
            blocks.append(row)
        rhs = [tt_round(ttm_apply(ttm_transpose(sel[i]), frhs[l]), tol)
               for i, (l, _) in enumerate(entries)]
        maps = [_box_map(space, dofs[l], box) for l, box in entries]
        levels = [l for l, _ in entries]
    elif approach == 2:
        used = [l for l in range(L) if dofs[l].active.any()]
        S = {}
        for l in used:
            d = dofs[l]
            acc = None
            for box in d.inside:
                t = selector_tt(box, d.positions, reds[l].new_dims, "global", d.hat.new_dims)
                acc = t if acc is None else ttm_add(acc, t)
            S[l] = ttm_round(acc, tol)
        blocks = []
        for i, l in enumerate(used):
            row = []
            for j, lp in enumerate(used):
                if j < i:
                    row.append(ttm_transpose(blocks[j][i]))
                    continue
                t = ttm_round(ttm_matmul(Mt(l, lp), S[lp]), tol)
                t = ttm_round(ttm_matmul(ttm_transpose(S[l]), t), tol)
                if l == lp:
                    for box in dofs[l].outside:
                        t = ttm_round(ttm_add(t, mask_tt(box, dofs[l].hat.new_dims)), tol)
                row.append(t)
            blocks.append(row)
        rhs = [tt_round(ttm_apply(ttm_transpose(S[l]), frhs[l]), tol) for l in used]
        maps = [_box_map(space, dofs[l], None) for l in used]
        levels = used
    else:
        raise ValueError("approach must be 1 or 2")
    return BlockSystem(approach, tuple(tuple(r) for r in blocks), tuple(rhs),
                       tuple(np.asarray(m) for m in maps), tuple(levels), space.ndofs())


def assemble(space: HierarchicalSpace, weights: WeightFields, source: SeparableField | None,
             approach: int, tol: float, kind: str = "stiffness") -> BlockSystem:
    return global_system(build_hierarchy(space, weights, source, tol, kind), approach)

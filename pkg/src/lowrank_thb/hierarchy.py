"""Nested tensor-product spline levels and THB activity bookkeeping.

Cell and spline sets are boolean arrays indexed by 0-based multi-indices of the
corresponding level. ``marks[l]`` marks the level-l cells whose union is the
refined region of the next level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

from .splines import dyadic_refine, open_uniform_knots, support_ranges


@dataclass(frozen=True, eq=False)
class MultiIndexSet:
    """Boolean membership mask; members are listed in little-endian order."""

    mask: np.ndarray

    @property
    def dims(self) -> tuple:
        return self.mask.shape

    def members(self) -> np.ndarray:
        flat = np.flatnonzero(self.mask.ravel(order="F"))
        return np.stack(np.unravel_index(flat, self.dims, order="F"), axis=1)

    def __len__(self):
        return int(self.mask.sum())

    def __contains__(self, idx):
        return bool(self.mask[tuple(idx)])

    def to_text(self) -> str:
        return "".join(" ".join(str(int(i)) for i in m) + "\n" for m in self.members())


@dataclass(frozen=True, eq=False)
class LevelGrid:
    knots: tuple  # KnotVector per dimension

    @property
    def cells(self) -> tuple:
        return tuple(kv.m for kv in self.knots)

    @property
    def nbasis(self) -> tuple:
        return tuple(kv.n for kv in self.knots)

    @property
    def degrees(self) -> tuple:
        return tuple(kv.degree for kv in self.knots)

    def supports(self) -> tuple:
        """Per dimension an (n, 2) array of first/last support cells."""
        return tuple(support_ranges(kv) for kv in self.knots)

    def refine(self) -> "LevelGrid":
        return LevelGrid(tuple(dyadic_refine(kv) for kv in self.knots))


def upsample(mask: np.ndarray) -> np.ndarray:
    """Children of marked cells under dyadic refinement."""
    out = mask
    for d in range(mask.ndim):
        out = np.repeat(out, 2, axis=d)
    return out


def _box_counts(mask: np.ndarray, lo: Sequence[np.ndarray], hi: Sequence[np.ndarray]) -> np.ndarray:
    """Number of set cells inside every box lo[d][i_d]..hi[d][i_d] (inclusive).

    Returns an array over the Cartesian product of box index ranges.
    """
    D = mask.ndim
    S = np.zeros(tuple(n + 1 for n in mask.shape), dtype=np.int64)
    S[(slice(1, None),) * D] = mask
    for d in range(D):
        S = np.cumsum(S, axis=d)
    out = 0
    for corner in product((0, 1), repeat=D):
        idx = tuple(hi[d] + 1 if c else lo[d] for d, c in enumerate(corner))
        sign = (-1) ** (D - sum(corner))
        out = out + sign * S[np.ix_(*idx)]
    return out


@dataclass(frozen=True, eq=False)
class HierarchicalSpace:
    levels: tuple  # LevelGrid per level
    refined_cells: tuple  # level-l cells covering the next region (empty on the last level)
    domain_cells: tuple  # level-l cells covering the level-l region
    active_cells: tuple
    nonactive_cells: tuple
    thb_splines: tuple  # active THB functions, boundary included
    active_splines: tuple  # thb_splines minus boundary_excluded
    deactivated_splines: tuple
    nonactive_splines: tuple
    boundary_excluded: tuple
    truncation_zero: tuple  # per l < L-1: level-(l+1) splines with support inside the next region
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def L(self) -> int:
        return len(self.levels)

    @property
    def dim(self) -> int:
        return len(self.levels[0].knots)

    @property
    def degrees(self) -> tuple:
        return self.levels[0].degrees

    def ndofs(self) -> int:
        return int(sum(a.sum() for a in self.active_splines))

    def nthb(self) -> int:
        return int(sum(a.sum() for a in self.thb_splines))

    def support_intersects(self, level: int, cells: np.ndarray) -> np.ndarray:
        """Splines of a level whose support box meets at least one of ``cells``."""
        sup = self.levels[level].supports()
        return _box_counts(cells, [s[:, 0] for s in sup], [s[:, 1] for s in sup]) > 0

    def dof_offsets(self) -> np.ndarray:
        counts = [int(a.sum()) for a in self.active_splines]
        return np.concatenate([[0], np.cumsum(counts)])

    def dof_lookup(self, level: int) -> np.ndarray:
        """Array over the level's spline grid holding the global DoF number or -1."""
        key = ("dof", level)
        if key not in self._cache:
            act = self.active_splines[level]
            out = np.full(act.size, -1, dtype=np.int64)
            flat = np.flatnonzero(act.ravel(order="F"))
            out[flat] = self.dof_offsets()[level] + np.arange(flat.size)
            out = out.reshape(act.shape, order="F")
            self._cache[key] = out
        return self._cache[key]


def _contained(mask: np.ndarray, sup) -> np.ndarray:
    """Splines whose whole support box lies inside ``mask``."""
    lo = [s[:, 0] for s in sup]
    hi = [s[:, 1] for s in sup]
    vol = 1
    for d in range(mask.ndim):
        shape = [1] * mask.ndim
        shape[d] = -1
        vol = vol * (hi[d] - lo[d] + 1).reshape(shape)
    return _box_counts(mask, lo, hi) == vol


def _as_mask(mark, dims) -> np.ndarray:
    if isinstance(mark, MultiIndexSet):
        mark = mark.mask
    arr = np.asarray(mark)
    if arr.dtype == bool and arr.shape == tuple(dims):
        return arr.copy()
    out = np.zeros(dims, dtype=bool)
    idx = np.asarray(list(mark), dtype=np.int64).reshape(-1, len(dims))
    if idx.size:
        if np.any(idx < 0) or np.any(idx >= np.asarray(dims)):
            raise ValueError("marked cell outside the level grid")
        out[tuple(idx.T)] = True
    return out


def boundary_mask(nbasis: Sequence[int]) -> np.ndarray:
    """Splines with a first or last univariate index in some dimension."""
    D = len(nbasis)
    out = np.zeros(tuple(nbasis), dtype=bool)
    for d in range(D):
        sl = [slice(None)] * D
        sl[d] = 0
        out[tuple(sl)] = True
        sl[d] = nbasis[d] - 1
        out[tuple(sl)] = True
    return out


def build_space(degrees, m0, marks: Sequence = ()) -> HierarchicalSpace:
    """Build the hierarchy with L = len(marks) + 1 levels.

    ``degrees`` and ``m0`` give the degree and initial cell count per dimension.
    Each ``marks[l]`` is a boolean mask over level-l cells (or an iterable of
    cell multi-indices).
    """
    degrees = tuple(int(p) for p in degrees)
    m0 = tuple(int(m) for m in m0)
    if len(degrees) != len(m0):
        raise ValueError("degrees and m0 must have the same length")
    base = LevelGrid(tuple(open_uniform_knots(p, m) for p, m in zip(degrees, m0)))
    levels = [base]
    for _ in marks:
        levels.append(levels[-1].refine())
    L = len(levels)

    refined = [_as_mask(mk, levels[l].cells) for l, mk in enumerate(marks)]
    refined.append(np.zeros(levels[-1].cells, dtype=bool))
    domain = [np.ones(base.cells, dtype=bool)]
    for l in range(1, L):
        domain.append(upsample(refined[l - 1]))
    for l in range(L):
        if np.any(refined[l] & ~domain[l]):
            raise ValueError(f"marks at level {l} are not nested inside the level-{l} region")
    for l in range(L - 1):
        if not refined[l].any():
            raise ValueError(f"level {l} has no marked cells but further levels follow")

    active_cells, nonactive_cells = [], []
    thb, act, deact, nonact, bnd, trunc = [], [], [], [], [], []
    for l in range(L):
        ac = domain[l] & ~refined[l]
        active_cells.append(ac)
        nonactive_cells.append(~ac)
        sup = levels[l].supports()
        in_dom = _contained(domain[l], sup)
        in_next = _contained(refined[l], sup)
        t = in_dom & ~in_next
        b = boundary_mask(levels[l].nbasis)
        thb.append(t)
        bnd.append(b & t)
        act.append(t & ~b)
        deact.append(in_dom & in_next)
        nonact.append(~(t & ~b) & ~(in_dom & in_next))
        if l > 0:
            trunc.append(in_dom)  # level-l splines with support inside the level-l region
    for arrs in (refined, domain, active_cells, nonactive_cells, thb, act, deact, nonact, bnd, trunc):
        for a in arrs:
            a.setflags(write=False)
    return HierarchicalSpace(
        levels=tuple(levels),
        refined_cells=tuple(refined),
        domain_cells=tuple(domain),
        active_cells=tuple(active_cells),
        nonactive_cells=tuple(nonactive_cells),
        thb_splines=tuple(thb),
        active_splines=tuple(act),
        deactivated_splines=tuple(deact),
        nonactive_splines=tuple(nonact),
        boundary_excluded=tuple(bnd),
        truncation_zero=tuple(trunc),
    )


def classify_cells(space: HierarchicalSpace, level: int):
    return MultiIndexSet(space.active_cells[level]), MultiIndexSet(space.nonactive_cells[level])


def classify_splines(space: HierarchicalSpace, level: int):
    return (MultiIndexSet(space.active_splines[level]),
            MultiIndexSet(space.deactivated_splines[level]),
            MultiIndexSet(space.nonactive_splines[level]))


def truncation_zero_set(space: HierarchicalSpace, level: int) -> MultiIndexSet:
    """Level-(level+1) splines whose support lies inside the refined region."""
    if not 0 <= level < space.L - 1:
        raise IndexError("truncation needs a finer level")
    return MultiIndexSet(space.truncation_zero[level])


def spline_support(space: HierarchicalSpace, level: int, idx) -> tuple:
    """Support of a spline as per-dimension (first, last) cell ranges."""
    sup = space.levels[level].supports()
    return tuple((int(s[i, 0]), int(s[i, 1])) for s, i in zip(sup, idx))


def activity_report(space: HierarchicalSpace) -> str:
    """Text dump of all activity sets, one multi-index per line."""
    out = []
    names = [("active_cells", space.active_cells), ("nonactive_cells", space.nonactive_cells),
             ("active_splines", space.active_splines),
             ("deactivated_splines", space.deactivated_splines),
             ("nonactive_splines", space.nonactive_splines),
             ("boundary_excluded", space.boundary_excluded)]
    for l in range(space.L):
        for name, sets in names:
            s = MultiIndexSet(sets[l])
            out.append(f"# level {l} {name} ({len(s)})\n")
            out.append(s.to_text())
    return "".join(out)

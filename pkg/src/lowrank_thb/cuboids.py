"""Slice discarding and greedy cuboid detection on boolean index grids.

Index sets are boolean arrays over a Cartesian grid; "first" always means
first in little-endian order (dimension 0 fastest). Indices are 0-based
except in the text dumps, which are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np


@dataclass(frozen=True, eq=False)
class SliceReduction:
    old_dims: tuple
    keep: tuple  # per dimension, sorted retained old indices

    @property
    def new_dims(self) -> tuple:
        return tuple(len(k) for k in self.keep)

    @property
    def ndim(self) -> int:
        return len(self.old_dims)

    def reduce(self, mask: np.ndarray) -> np.ndarray:
        """Restrict a mask over the old grid to the retained slices."""
        return mask[np.ix_(*self.keep)]

    def expand(self, mask: np.ndarray) -> np.ndarray:
        """Embed a mask over the reduced grid into the old grid."""
        out = np.zeros(self.old_dims, dtype=mask.dtype)
        out[np.ix_(*self.keep)] = mask
        return out

    def positions(self, old: "SliceReduction") -> tuple:
        """Positions of this reduction's kept indices inside ``old``'s kept indices."""
        out = []
        for mine, theirs in zip(self.keep, old.keep):
            pos = np.searchsorted(theirs, mine)
            if np.any(pos >= len(theirs)) or np.any(theirs[np.minimum(pos, len(theirs) - 1)] != mine):
                raise ValueError("reduction is not contained in the reference reduction")
            out.append(pos)
        return tuple(out)


def identity_reduction(dims) -> SliceReduction:
    return SliceReduction(tuple(dims), tuple(np.arange(n) for n in dims))


def discard_slices(mask: np.ndarray) -> tuple[SliceReduction, np.ndarray]:
    """Drop every index hyperplane that holds no member of ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    D = mask.ndim
    keep = []
    for d in range(D):
        other = tuple(a for a in range(D) if a != d)
        keep.append(np.nonzero(mask.any(axis=other) if other else mask)[0])
    red = SliceReduction(mask.shape, tuple(keep))
    return red, red.reduce(mask)


@dataclass(frozen=True)
class IndexBox:
    start: tuple
    extent: tuple

    @property
    def stop(self) -> tuple:
        return tuple(s + e for s, e in zip(self.start, self.extent))

    @property
    def volume(self) -> int:
        return prod(self.extent)

    @property
    def slices(self) -> tuple:
        return tuple(slice(s, s + e) for s, e in zip(self.start, self.extent))

    def ranges(self) -> tuple:
        return tuple(np.arange(s, s + e) for s, e in zip(self.start, self.extent))

    def to_text(self) -> str:
        return " ".join(f"{s + 1}..{s + e}" for s, e in zip(self.start, self.extent))


@dataclass(frozen=True)
class CuboidPartition:
    boxes: tuple
    dims: tuple

    def __len__(self):
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def to_mask(self) -> np.ndarray:
        out = np.zeros(self.dims, dtype=bool)
        for b in self.boxes:
            out[b.slices] = True
        return out

    def to_text(self) -> str:
        return "".join(b.to_text() + "\n" for b in self.boxes)


def greedy_partition(mask: np.ndarray) -> CuboidPartition:
    """Cover ``mask`` by disjoint boxes, greedily from the little-endian-first member.

    Each box is grown along dimension 0 while the run stays inside the set,
    then along dimension 1 while the whole slab does, and so on.
    """
    work = np.array(mask, dtype=bool, order="F")
    dims = work.shape
    flat = work.reshape(-1, order="F")  # a view: clearing boxes in work updates it
    boxes = []
    cursor = 0
    total = flat.size
    while True:
        hits = np.flatnonzero(flat[cursor:])
        if hits.size == 0:
            break
        cursor += int(hits[0])
        start = np.unravel_index(cursor, dims, order="F")
        extent = [1] * len(dims)
        for d in range(len(dims)):
            while start[d] + extent[d] < dims[d]:
                sl = tuple(slice(s, s + e) for s, e in zip(start, extent))
                sl = sl[:d] + (start[d] + extent[d],) + sl[d + 1:]
                if not work[sl].all():
                    break
                extent[d] += 1
        box = IndexBox(tuple(int(s) for s in start), tuple(extent))
        work[box.slices] = False
        boxes.append(box)
        if cursor >= total:
            break
    return CuboidPartition(tuple(boxes), dims)


def partition_pair(mask: np.ndarray) -> tuple[CuboidPartition, CuboidPartition]:
    """Greedy partitions of a set and of its complement within the same grid."""
    mask = np.asarray(mask, dtype=bool)
    return greedy_partition(mask), greedy_partition(~mask)

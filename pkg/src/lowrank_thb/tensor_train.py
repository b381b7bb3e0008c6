"""Tensor-train vectors and matrices.

A TTVector with mode sizes (n1, ..., nD) stores cores of shape
(r[d-1], n[d], r[d]); a TTMatrix stores cores of shape (r[d-1], m[d], n[d], r[d]).
Whenever a tensor is flattened to a vector or matrix the first index runs
fastest (column-major / little-endian), so a rank-1 TTMatrix with factors
A1, ..., AD expands to ``kron(AD, ..., A1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod, sqrt
from typing import Sequence

import numpy as np

DENSE_CAP = 50_000_000


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_chain(cores, ndim):
    if len(cores) == 0:
        raise ValueError("a tensor train needs at least one core")
    for c in cores:
        if c.ndim != ndim:
            raise ValueError(f"core of order {c.ndim}, expected {ndim}")
        if min(c.shape) == 0:
            raise ValueError("zero-size core")
    if cores[0].shape[0] != 1 or cores[-1].shape[-1] != 1:
        raise ValueError("boundary ranks must be 1")
    for a, b in zip(cores[:-1], cores[1:]):
        if a.shape[-1] != b.shape[0]:
            raise ValueError(f"rank mismatch between cores: {a.shape} vs {b.shape}")


@dataclass(frozen=True, eq=False)
class TTVector:
    cores: tuple

    def __post_init__(self):
        cores = tuple(_freeze(c) for c in self.cores)
        _check_chain(cores, 3)
        object.__setattr__(self, "cores", cores)

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def mode_sizes(self) -> tuple:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def size(self) -> int:
        return prod(self.mode_sizes)

    def __add__(self, other):
        return tt_add(self, other)

    def __sub__(self, other):
        return tt_add(self, tt_scale(other, -1.0))

    def __mul__(self, a):
        return tt_scale(self, a)

    __rmul__ = __mul__

    def __repr__(self):
        return f"TTVector(modes={self.mode_sizes}, ranks={self.ranks})"


@dataclass(frozen=True, eq=False)
class TTMatrix:
    cores: tuple

    def __post_init__(self):
        cores = tuple(_freeze(c) for c in self.cores)
        _check_chain(cores, 4)
        object.__setattr__(self, "cores", cores)

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def row_sizes(self) -> tuple:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def col_sizes(self) -> tuple:
        return tuple(c.shape[2] for c in self.cores)

    @property
    def ranks(self) -> tuple:
        return (1,) + tuple(c.shape[3] for c in self.cores)

    @property
    def shape(self) -> tuple:
        return prod(self.row_sizes), prod(self.col_sizes)

    @property
    def T(self) -> "TTMatrix":
        return ttm_transpose(self)

    def __add__(self, other):
        return ttm_add(self, other)

    def __sub__(self, other):
        return ttm_add(self, ttm_scale(other, -1.0))

    def __mul__(self, a):
        return ttm_scale(self, a)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, TTVector):
            return ttm_apply(self, other)
        return ttm_matmul(self, other)

    def __repr__(self):
        return f"TTMatrix(rows={self.row_sizes}, cols={self.col_sizes}, ranks={self.ranks})"


# ---------------------------------------------------------------- construction

def tt_zeros(modes: Sequence[int]) -> TTVector:
    return TTVector([np.zeros((1, n, 1)) for n in modes])


def tt_ones(modes: Sequence[int]) -> TTVector:
    return TTVector([np.ones((1, n, 1)) for n in modes])


def tt_rank1(vectors: Sequence[np.ndarray]) -> TTVector:
    return TTVector([np.asarray(v, dtype=float).reshape(1, -1, 1) for v in vectors])


def _truncation_rank(s: np.ndarray, delta: float, rmax: int | None) -> int:
    # smallest r with sqrt(sum_{i>=r} s_i^2) <= delta
    tail = np.sqrt(np.cumsum((s ** 2)[::-1]))[::-1]
    keep = np.nonzero(tail > delta)[0]
    r = int(keep[-1]) + 1 if keep.size else 1
    if rmax is not None:
        r = min(r, rmax)
    return max(r, 1)


def tt_from_dense(tensor, tol: float = 0.0, rmax: int | None = None) -> TTVector:
    """TT-SVD of a dense D-way array with relative Frobenius tolerance ``tol``."""
    t = np.asarray(tensor, dtype=float)
    if t.ndim == 0:
        t = t.reshape(1)
    if t.size == 0:
        raise ValueError(f"zero-size mode in tensor of shape {t.shape}")
    if tol < 0:
        raise ValueError("tol must be non-negative")
    modes = t.shape
    D = len(modes)
    if D == 1:
        return TTVector([t.reshape(1, -1, 1)])
    delta = tol / sqrt(D - 1) * np.linalg.norm(t)
    cores = []
    c = t
    r = 1
    for d in range(D - 1):
        c = c.reshape(r * modes[d], -1)
        u, s, vt = np.linalg.svd(c, full_matrices=False)
        rn = _truncation_rank(s, delta, rmax)
        cores.append(u[:, :rn].reshape(r, modes[d], rn))
        c = s[:rn, None] * vt[:rn]
        r = rn
    cores.append(c.reshape(r, modes[-1], 1))
    return TTVector(cores)


def tt_to_dense(x, max_entries: int = DENSE_CAP) -> np.ndarray:
    """Contract all cores.

    Returns an array of shape ``mode_sizes`` for a TTVector and a 2-D matrix
    (little-endian rows and columns) for a TTMatrix.
    """
    if isinstance(x, TTMatrix):
        m, n = x.shape
        if m * n > max_entries:
            raise ValueError(f"dense expansion has {m}x{n} entries, cap is {max_entries}")
        D = x.ndim
        res = x.cores[0].reshape(x.row_sizes[0], x.col_sizes[0], -1)
        for c in x.cores[1:]:
            res = np.einsum("MNa,amnb->MmNnb", res, c)
            res = res.reshape(res.shape[0] * res.shape[1], res.shape[2] * res.shape[3], -1)
        # rows are (i1..iD) with iD slowest in C order; reorder to little-endian
        res = res[..., 0]
        rs, cs = x.row_sizes, x.col_sizes
        res = res.reshape(*rs, *cs)
        perm = list(range(D - 1, -1, -1)) + list(range(2 * D - 1, D - 1, -1))
        return res.transpose(perm).reshape(m, n)
    if x.size > max_entries:
        raise ValueError(f"dense expansion has {x.size} entries, cap is {max_entries}")
    res = x.cores[0].reshape(x.mode_sizes[0], -1)
    for c in x.cores[1:]:
        res = np.tensordot(res, c, axes=(res.ndim - 1, 0))
    return res.reshape(x.mode_sizes)


def tt_vec(x: TTVector, max_entries: int = DENSE_CAP) -> np.ndarray:
    """Little-endian flattening of a TTVector."""
    return tt_to_dense(x, max_entries).ravel(order="F")


def tt_from_vec(v, modes: Sequence[int], tol: float = 0.0) -> TTVector:
    return tt_from_dense(np.asarray(v).reshape(tuple(modes), order="F"), tol)


# ---------------------------------------------------------------- arithmetic

def tt_scale(x: TTVector, a: float) -> TTVector:
    cores = list(x.cores)
    cores[0] = cores[0] * a
    return TTVector(cores)


def _block_sum(ca, cb, first, last):
    """Block-diagonal stacking of two cores along their rank axes."""
    if first and last:
        return ca + cb
    if first:
        return np.concatenate([ca, cb], axis=-1)
    if last:
        return np.concatenate([ca, cb], axis=0)
    ra0, ra1 = ca.shape[0], ca.shape[-1]
    rb0, rb1 = cb.shape[0], cb.shape[-1]
    mid = ca.shape[1:-1]
    out = np.zeros((ra0 + rb0, *mid, ra1 + rb1))
    out[:ra0, ..., :ra1] = ca
    out[ra0:, ..., ra1:] = cb
    return out


def _sum_cores(xa, xb):
    D = len(xa)
    return [_block_sum(a, b, d == 0, d == D - 1) for d, (a, b) in enumerate(zip(xa, xb))]


def tt_add(x: TTVector, y: TTVector) -> TTVector:
    if x.mode_sizes != y.mode_sizes:
        raise ValueError(f"mode sizes differ: {x.mode_sizes} vs {y.mode_sizes}")
    return TTVector(_sum_cores(x.cores, y.cores))


def tt_sum(terms: Sequence[TTVector], tol: float | None = None) -> TTVector:
    """Add a list of TT vectors, rounding after every addition when ``tol`` is given."""
    it = iter(terms)
    acc = next(it)
    for t in it:
        acc = tt_add(acc, t)
        if tol is not None:
            acc = tt_round(acc, tol)
    return acc


def tt_dot(x: TTVector, y: TTVector) -> float:
    if x.mode_sizes != y.mode_sizes:
        raise ValueError(f"mode sizes differ: {x.mode_sizes} vs {y.mode_sizes}")
    v = np.ones((1, 1))
    for a, b in zip(x.cores, y.cores):
        v = np.einsum("xy,xnp,ynq->pq", v, a, b)
    return float(v[0, 0])


def _orthogonalize_left(cores):
    """Left-orthogonalize cores 0..D-2; the norm ends up in the last core."""
    cores = [np.array(c) for c in cores]
    for d in range(len(cores) - 1):
        r0, n, r1 = cores[d].shape
        q, r = np.linalg.qr(cores[d].reshape(r0 * n, r1))
        cores[d] = q.reshape(r0, n, q.shape[1])
        cores[d + 1] = np.tensordot(r, cores[d + 1], axes=(1, 0))
    return cores


def tt_norm(x: TTVector) -> float:
    return float(np.linalg.norm(_orthogonalize_left(x.cores)[-1]))


def tt_round(x: TTVector, tol: float, rmax: int | None = None) -> TTVector:
    """Recompress to relative Frobenius accuracy ``tol``."""
    D = x.ndim
    if D == 1:
        return x
    cores = [np.array(c) for c in x.cores]
    # right-to-left orthogonalization
    for d in range(D - 1, 0, -1):
        r0, n, r1 = cores[d].shape
        q, r = np.linalg.qr(cores[d].reshape(r0, n * r1).T)
        cores[d] = q.T.reshape(q.shape[1], n, r1)
        cores[d - 1] = np.tensordot(cores[d - 1], r.T, axes=(2, 0))
    nrm = np.linalg.norm(cores[0])
    if nrm == 0.0:
        return tt_zeros(x.mode_sizes)
    delta = tol / sqrt(D - 1) * nrm
    for d in range(D - 1):
        r0, n, r1 = cores[d].shape
        u, s, vt = np.linalg.svd(cores[d].reshape(r0 * n, r1), full_matrices=False)
        rn = _truncation_rank(s, delta, rmax)
        cores[d] = u[:, :rn].reshape(r0, n, rn)
        cores[d + 1] = np.tensordot(s[:rn, None] * vt[:rn], cores[d + 1], axes=(1, 0))
    return TTVector(cores)


# ---------------------------------------------------------------- operators

def ttm_from_kron(factors: Sequence[np.ndarray]) -> TTMatrix:
    """Rank-1 TTMatrix whose dense form is kron(A_D, ..., A_1)."""
    cores = []
    for a in factors:
        a = np.atleast_2d(np.asarray(a, dtype=float))
        cores.append(a.reshape(1, *a.shape, 1))
    return TTMatrix(cores)


def ttm_identity(modes: Sequence[int]) -> TTMatrix:
    return ttm_from_kron([np.eye(n) for n in modes])


def ttm_zeros(rows: Sequence[int], cols: Sequence[int]) -> TTMatrix:
    return ttm_from_kron([np.zeros((m, n)) for m, n in zip(rows, cols)])


def ttm_diag_from(x: TTVector) -> TTMatrix:
    """Diagonal TTMatrix with the entries of x on its diagonal."""
    cores = []
    for c in x.cores:
        r0, n, r1 = c.shape
        m = np.zeros((r0, n, n, r1))
        idx = np.arange(n)
        m[:, idx, idx, :] = c
        cores.append(m)
    return TTMatrix(cores)


def ttm_scale(A: TTMatrix, a: float) -> TTMatrix:
    cores = list(A.cores)
    cores[0] = cores[0] * a
    return TTMatrix(cores)


def ttm_add(A: TTMatrix, B: TTMatrix) -> TTMatrix:
    if A.row_sizes != B.row_sizes or A.col_sizes != B.col_sizes:
        raise ValueError(f"operator sizes differ: {A!r} vs {B!r}")
    return TTMatrix(_sum_cores(A.cores, B.cores))


def ttm_transpose(A: TTMatrix) -> TTMatrix:
    return TTMatrix([c.transpose(0, 2, 1, 3) for c in A.cores])


def ttm_as_vector(A: TTMatrix) -> TTVector:
    return TTVector([c.reshape(c.shape[0], c.shape[1] * c.shape[2], c.shape[3]) for c in A.cores])


def ttm_round(A: TTMatrix, tol: float, rmax: int | None = None) -> TTMatrix:
    v = tt_round(ttm_as_vector(A), tol, rmax)
    return TTMatrix([c.reshape(c.shape[0], m, n, c.shape[2])
                     for c, m, n in zip(v.cores, A.row_sizes, A.col_sizes)])


def ttm_sum(terms: Sequence[TTMatrix], tol: float | None = None) -> TTMatrix:
    it = iter(terms)
    acc = next(it)
    for t in it:
        acc = ttm_add(acc, t)
        if tol is not None:
            acc = ttm_round(acc, tol)
    return acc


def ttm_norm(A: TTMatrix) -> float:
    return tt_norm(ttm_as_vector(A))


def ttm_apply(A: TTMatrix, x: TTVector) -> TTVector:
    if A.col_sizes != x.mode_sizes:
        raise ValueError(f"operator columns {A.col_sizes} do not match vector modes {x.mode_sizes}")
    cores = []
    for a, c in zip(A.cores, x.cores):
        y = np.einsum("amnb,xny->axmby", a, c)
        ra, rx, m, rb, ry = y.shape
        cores.append(y.reshape(ra * rx, m, rb * ry))
    return TTVector(cores)


def ttm_matmul(A: TTMatrix, B: TTMatrix) -> TTMatrix:
    if A.col_sizes != B.row_sizes:
        raise ValueError(f"inner sizes differ: {A.col_sizes} vs {B.row_sizes}")
    cores = []
    for a, b in zip(A.cores, B.cores):
        c = np.einsum("amkb,xkny->axmnby", a, b)
        ra, rx, m, n, rb, ry = c.shape
        cores.append(c.reshape(ra * rx, m, n, rb * ry))
    return TTMatrix(cores)


def ttm_diag(A: TTMatrix) -> TTVector:
    if A.row_sizes != A.col_sizes:
        raise ValueError(f"diagonal needs square modes, got {A.row_sizes} x {A.col_sizes}")
    return TTVector([np.einsum("aiib->aib", c) for c in A.cores])


def ttm_triple(left: TTMatrix, A: TTMatrix, right: TTMatrix, tol: float) -> TTMatrix:
    """Rounded ``left.T @ A @ right``."""
    return ttm_round(ttm_matmul(ttm_round(ttm_matmul(ttm_transpose(left), A), tol), right), tol)

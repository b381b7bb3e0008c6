"""Univariate B-splines on open knot vectors over [0, 1].

Basis indices and cell (knot span) indices are 0-based.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True, eq=False)
class KnotVector:
    degree: int
    knots: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float).copy()
        k.setflags(write=False)
        object.__setattr__(self, "knots", k)
        p = self.degree
        if p < 0:
            raise ValueError("degree must be non-negative")
        if np.any(np.diff(k) < 0):
            raise ValueError("knots must be non-decreasing")
        if len(k) < 2 * (p + 1) or np.any(k[: p + 1] != 0.0) or np.any(k[-p - 1:] != 1.0):
            raise ValueError("knot vector must be open on [0, 1]")

    @property
    def n(self) -> int:
        return len(self.knots) - self.degree - 1

    @cached_property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def m(self) -> int:
        """Number of cells (non-empty knot spans)."""
        return len(self.breakpoints) - 1

    def __eq__(self, other):
        return (isinstance(other, KnotVector) and self.degree == other.degree
                and np.array_equal(self.knots, other.knots))

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))

    def __repr__(self):
        return f"KnotVector(p={self.degree}, m={self.m}, n={self.n})"


def open_uniform_knots(p: int, m: int) -> KnotVector:
    if p < 1 or m < 1:
        raise ValueError("need p >= 1 and m >= 1")
    inner = np.arange(1, m) / m
    return KnotVector(p, np.concatenate([np.zeros(p + 1), inner, np.ones(p + 1)]))


def knots_from_breakpoints(p: int, breaks) -> KnotVector:
    """Open knot vector of degree p with simple interior knots at ``breaks``."""
    b = np.asarray(breaks, dtype=float)
    return KnotVector(p, np.concatenate([np.zeros(p + 1), b[1:-1], np.ones(p + 1)]))


def find_span(kv: KnotVector, x: np.ndarray) -> np.ndarray:
    """Knot-span index s with t[s] <= x < t[s+1]; x = 1 uses the last non-empty span."""
    s = np.searchsorted(kv.knots, x, side="right") - 1
    return np.clip(s, kv.degree, kv.n - 1)


def _nonzero_basis(t, p, s, x):
    """Values of the p+1 basis functions N_{s-p..s, p} at x (vectorized, Cox-de Boor)."""
    npts = x.shape[0]
    N = np.zeros((npts, p + 1))
    N[:, 0] = 1.0
    left = np.zeros((npts, p + 1))
    right = np.zeros((npts, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - t[s + 1 - j]
        right[:, j] = t[s + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return N


def local_basis(kv: KnotVector, x, deriv: int = 0):
    """Spans and nonzero basis values (or first derivatives) at points x.

    Returns (span, vals) where vals[k, j] belongs to basis index span[k]-p+j.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("evaluation points must lie in [0, 1]")
    t, p = kv.knots, kv.degree
    s = find_span(kv, x)
    if deriv == 0:
        return s, _nonzero_basis(t, p, s, x)
    if deriv != 1:
        raise ValueError("only derivative orders 0 and 1 are supported")
    if p == 0:
        return s, np.zeros((x.shape[0], 1))
    low = _nonzero_basis(t, p - 1, s, x)  # N_{s-p+1..s, p-1}
    lowp = np.zeros((x.shape[0], p + 2))
    lowp[:, 1:-1] = low  # pad N_{s-p,p-1} = N_{s+1,p-1} = 0
    dN = np.zeros((x.shape[0], p + 1))
    for j in range(p + 1):
        i = s - p + j
        d1 = t[i + p] - t[i]
        d2 = t[i + p + 1] - t[i + 1]
        a = np.where(d1 > 0, lowp[:, j] / np.where(d1 > 0, d1, 1.0), 0.0)
        b = np.where(d2 > 0, lowp[:, j + 1] / np.where(d2 > 0, d2, 1.0), 0.0)
        dN[:, j] = p * (a - b)
    return s, dN


def basis_matrix(kv: KnotVector, x, deriv: int = 0) -> np.ndarray:
    """Dense (len(x), n) matrix of basis values or derivatives."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s, vals = local_basis(kv, x, deriv)
    out = np.zeros((x.shape[0], kv.n))
    rows = np.repeat(np.arange(x.shape[0]), kv.degree + 1)
    cols = (s[:, None] - kv.degree + np.arange(kv.degree + 1)).ravel()
    out[rows, cols] = vals.ravel()
    return out


def eval_basis(kv: KnotVector, x: float, deriv: int = 0) -> np.ndarray:
    return basis_matrix(kv, [x], deriv)[0]


def greville(kv: KnotVector) -> np.ndarray:
    p, t = kv.degree, kv.knots
    if p == 0:
        return 0.5 * (t[:-1] + t[1:])
    c = np.cumsum(np.concatenate([[0.0], t]))
    return (c[p + 1: p + 1 + kv.n] - c[1: 1 + kv.n]) / p


def dyadic_refine(kv: KnotVector) -> KnotVector:
    b = kv.breakpoints
    mids = 0.5 * (b[:-1] + b[1:])
    return KnotVector(kv.degree, np.sort(np.concatenate([kv.knots, mids])))


def _insert_knot(t: np.ndarray, p: int, u: float):
    """Boehm insertion of one knot; returns the new knots and the (n+1) x n matrix."""
    n = len(t) - p - 1
    k = int(np.searchsorted(t, u, side="right") - 1)
    A = np.zeros((n + 1, n))
    for i in range(n + 1):
        if i <= k - p:
            a = 1.0
        elif i >= k + 1:
            a = 0.0
        else:
            a = (u - t[i]) / (t[i + p] - t[i])
        if i < n:
            A[i, i] += a
        if i >= 1:
            A[i, i - 1] += 1.0 - a
    return np.insert(t, k + 1, u), A


def two_scale_matrix(coarse: KnotVector, fine: KnotVector) -> np.ndarray:
    """Matrix C (fine.n x coarse.n) with coarse_j = sum_i C[i, j] fine_i."""
    if coarse.degree != fine.degree:
        raise ValueError("degrees differ")
    missing = Counter(np.round(fine.knots, 14).tolist())
    missing.subtract(Counter(np.round(coarse.knots, 14).tolist()))
    if any(v < 0 for v in missing.values()):
        raise ValueError("fine knot vector is not a refinement of the coarse one")
    new = sorted(u for u, c in missing.items() for _ in range(c))
    t = np.array(coarse.knots)
    C = np.eye(coarse.n)
    for u in new:
        t, A = _insert_knot(t, coarse.degree, u)
        C = A @ C
    return C


def support_range(kv: KnotVector, i: int) -> tuple[int, int]:
    """First and last cell index (inclusive) on which basis function i is nonzero."""
    if not 0 <= i < kv.n:
        raise IndexError(f"basis index {i} outside 0..{kv.n - 1}")
    b = kv.breakpoints
    t = kv.knots
    first = int(np.searchsorted(b, t[i]))
    last = int(np.searchsorted(b, t[i + kv.degree + 1])) - 1
    return first, last


def support_ranges(kv: KnotVector) -> np.ndarray:
    """(n, 2) array of support_range for every basis function."""
    b = kv.breakpoints
    t = kv.knots
    p = kv.degree
    first = np.searchsorted(b, t[: kv.n])
    last = np.searchsorted(b, t[p + 1: p + 1 + kv.n]) - 1
    return np.stack([first, last], axis=1)


def gauss_on_spans(breaks, nq: int):
    """Gauss-Legendre nodes and weights on every span of ``breaks``.

    Returns arrays of shape (len(breaks)-1, nq).
    """
    xg, wg = np.polynomial.legendre.leggauss(nq)
    b = np.asarray(breaks, dtype=float)
    a, h = b[:-1, None], (b[1:] - b[:-1])[:, None]
    return a + 0.5 * h * (xg + 1.0), 0.5 * h * wg

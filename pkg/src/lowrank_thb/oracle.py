"""Dense reference implementation: THB basis by truncation cascade, cell-loop assembly.

Everything here is deliberately straightforward and size-limited. Global DoFs
are ordered by level, then little-endian within the level's spline grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .geometry_interp import GeometryMap, eval_map, weight_terms
from .hierarchy import HierarchicalSpace
from .splines import gauss_on_spans, local_basis, two_scale_matrix

DOF_CAP = 20_000
CHUNK = 256


def kron_le(mats):
    """Sparse Kronecker product in little-endian order: kron(A_D, ..., A_1)."""
    out = sp.csr_matrix(mats[0])
    for m in mats[1:]:
        out = sp.kron(sp.csr_matrix(m), out, format="csr")
    return out


def flat_le(mask: np.ndarray) -> np.ndarray:
    return mask.ravel(order="F")


@dataclass(frozen=True, eq=False)
class DenseTHBBasis:
    space: HierarchicalSpace
    level_maps: tuple  # level-k coefficients of every THB function, valid on level-k active cells
    func_level: np.ndarray
    func_index: np.ndarray  # flat little-endian index within the level grid
    is_dof: np.ndarray

    @property
    def nfuncs(self) -> int:
        return self.func_level.size

    @property
    def finest(self) -> sp.csr_matrix:
        return self.level_maps[-1]

    def expand(self, dof_coeffs: np.ndarray) -> np.ndarray:
        """Coefficients over all THB functions (zero on boundary functions)."""
        full = np.zeros(self.nfuncs)
        full[self.is_dof] = dof_coeffs
        return full

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """(N, nfuncs) matrix of all THB functions at points x."""
        lv = self.space.levels[-1]
        return (tensor_basis_at(lv.knots, x) @ self.finest).toarray()


def tensor_basis_at(knots, x: np.ndarray) -> sp.csr_matrix:
    """Sparse (N, prod n) matrix of tensor-product B-spline values at points x."""
    x = np.atleast_2d(x)
    N = x.shape[0]
    vals = np.ones((N, 1))
    idx = np.zeros((N, 1), dtype=np.int64)
    stride = 1
    for d, kv in enumerate(knots):
        s, v = local_basis(kv, x[:, d])
        cols = s[:, None] - kv.degree + np.arange(kv.degree + 1)
        vals = (vals[:, :, None] * v[:, None, :]).reshape(N, -1)
        idx = (idx[:, :, None] + stride * cols[:, None, :]).reshape(N, -1)
        stride *= kv.n
    rows = np.repeat(np.arange(N), vals.shape[1])
    return sp.csr_matrix((vals.ravel(), (rows, idx.ravel())), shape=(N, stride))


def thb_basis(space: HierarchicalSpace) -> DenseTHBBasis:
    maps = []
    levels, index, dof = [], [], []
    R = None
    for k, lv in enumerate(space.levels):
        thb = flat_le(space.thb_splines[k])
        sel = np.flatnonzero(thb)
        N = thb.size
        E = sp.csr_matrix((np.ones(sel.size), (sel, np.arange(sel.size))), shape=(N, sel.size))
        if R is None:
            R = E
        else:
            coarse = space.levels[k - 1]
            C = kron_le([two_scale_matrix(a, b) for a, b in zip(coarse.knots, lv.knots)])
            keep = (~flat_le(space.truncation_zero[k - 1])).astype(float)
            R = sp.hstack([sp.diags(keep) @ C @ R, E], format="csr")
        maps.append(R)
        levels.append(np.full(sel.size, k))
        index.append(sel)
        dof.append(~flat_le(space.boundary_excluded[k])[sel])
    return DenseTHBBasis(space, tuple(maps), np.concatenate(levels), np.concatenate(index),
                         np.concatenate(dof))


def quad_points(space: HierarchicalSpace, geometry: GeometryMap | None = None) -> int:
    """Gauss nodes per direction: exact for degree 2p + p_w, p_w the weight-space degree."""
    p = max(space.degrees)
    pw = 2 if geometry is None else max(kv.degree for kv in geometry.knots) + 1
    return ceil((2 * p + pw + 1) / 2)


class _CellQuadrature:
    """Tensor Gauss rule and local basis values on the cells of one level."""

    def __init__(self, level, nq):
        self.knots = level.knots
        self.D = len(level.knots)
        self.nq = nq
        self.x, self.w, self.vals, self.ders = [], [], [], []
        for kv in level.knots:
            x, w = gauss_on_spans(kv.breakpoints, nq)
            s, v = local_basis(kv, x.ravel())
            _, dv = local_basis(kv, x.ravel(), 1)
            assert np.all(s.reshape(x.shape) == np.arange(kv.m)[:, None] + kv.degree)
            self.x.append(x)
            self.w.append(w)
            self.vals.append(v.reshape(kv.m, nq, -1))
            self.ders.append(dv.reshape(kv.m, nq, -1))

    def chunk(self, cells: np.ndarray):
        """Points, weights, values and parametric gradients for cells (C, D)."""
        D = self.D
        C = cells.shape[0]
        pts, w, V = [], np.ones((C, 1)), np.ones((C, 1, 1))
        G = [np.ones((C, 1, 1)) for _ in range(D)]
        for d in range(D):
            j = cells[:, d]
            xd, wd = self.x[d][j], self.w[d][j]
            vd, dd = self.vals[d][j], self.ders[d][j]
            w = (w[:, :, None] * wd[:, None, :]).reshape(C, -1)
            V = (V[:, :, None, :, None] * vd[:, None, :, None, :]).reshape(C, w.shape[1], -1)
            for b in range(D):
                f = dd if b == d else vd
                G[b] = (G[b][:, :, None, :, None] * f[:, None, :, None, :]).reshape(C, w.shape[1], -1)
            pts.append(xd)
        # points in the same order as w: the last dimension runs fastest
        X = np.ones((C, 1, 0))
        for d in range(D):
            n0 = X.shape[1]
            a = np.repeat(X, self.nq, axis=1)
            b = np.tile(pts[d], (1, n0))[:, :, None]
            X = np.concatenate([a, b], axis=2)
        return X, w, V, np.stack(G, axis=2)

    def local_indices(self, cells: np.ndarray) -> np.ndarray:
        """Flat level indices of the (p+1)^D functions living on each cell (same order as V)."""
        C = cells.shape[0]
        idx = np.zeros((C, 1), dtype=np.int64)
        stride = 1
        for d, kv in enumerate(self.knots):
            cols = cells[:, d][:, None] + np.arange(kv.degree + 1)
            idx = (idx[:, :, None] + stride * cols[:, None, :]).reshape(C, -1)
            stride *= kv.n
        return idx


def _cells_of(mask: np.ndarray) -> np.ndarray:
    return np.stack(np.unravel_index(np.flatnonzero(flat_le(mask)), mask.shape, order="F"), axis=1)


def level_matrices(space: HierarchicalSpace, geometry: GeometryMap, level: int,
                   f: Callable | None = None, cells: np.ndarray | None = None, nq: int | None = None):
    """Level-wise stiffness, mass (sparse, full level grid) and load over a cell mask."""
    lv = space.levels[level]
    nq = nq or quad_points(space, geometry)
    cq = _CellQuadrature(lv, nq)
    mask = space.active_cells[level] if cells is None else cells
    cl = _cells_of(mask)
    N = int(np.prod(lv.nbasis))
    rows, cols, kv, mv = [], [], [], []
    F = np.zeros(N)
    for s in range(0, cl.shape[0], CHUNK):
        c = cl[s: s + CHUNK]
        X, w, V, G = cq.chunk(c)
        C, nqp, _ = X.shape
        omega, Q = weight_terms(geometry, X.reshape(-1, space.dim))
        omega = omega.reshape(C, nqp)
        Q = Q.reshape(C, nqp, space.dim, space.dim)
        wq = w[:, :, None, None] * Q
        T = np.einsum("cqkl,cqlb->cqkb", wq, G)
        Kl = np.einsum("cqka,cqkb->cab", G, T)
        Ml = np.einsum("cq,cqa,cqb->cab", w * omega, V, V)
        idx = cq.local_indices(c)
        nl = idx.shape[1]
        rows.append(np.repeat(idx, nl, axis=1).ravel())
        cols.append(np.tile(idx, (1, nl)).ravel())
        kv.append(Kl.ravel())
        mv.append(Ml.ravel())
        if f is not None:
            fx = f(eval_map(geometry, X.reshape(-1, space.dim))).reshape(C, nqp)
            np.add.at(F, idx.ravel(), np.einsum("cq,cqa->ca", w * omega * fx, V).ravel())
    if rows:
        r, cidx = np.concatenate(rows), np.concatenate(cols)
        K = sp.csr_matrix((np.concatenate(kv), (r, cidx)), shape=(N, N))
        M = sp.csr_matrix((np.concatenate(mv), (r, cidx)), shape=(N, N))
    else:
        K = M = sp.csr_matrix((N, N))
    return K, M, F


@dataclass(frozen=True, eq=False)
class DenseSystem:
    stiffness: np.ndarray
    mass: np.ndarray
    load: np.ndarray
    basis: DenseTHBBasis


def dense_assemble(space: HierarchicalSpace, geometry: GeometryMap, f: Callable | None = None,
                   basis: DenseTHBBasis | None = None, nq: int | None = None) -> DenseSystem:
    basis = basis or thb_basis(space)
    ndof = int(basis.is_dof.sum())
    if ndof > DOF_CAP:
        raise ValueError(f"{ndof} DoFs exceed the oracle cap of {DOF_CAP}")
    n = basis.nfuncs
    K = sp.csr_matrix((n, n))
    M = sp.csr_matrix((n, n))
    F = np.zeros(n)
    for k in range(space.L):
        Kk, Mk, Fk = level_matrices(space, geometry, k, f, nq=nq)
        R = basis.level_maps[k]
        R = sp.hstack([R, sp.csr_matrix((R.shape[0], n - R.shape[1]))], format="csr")
        K = K + R.T @ Kk @ R
        M = M + R.T @ Mk @ R
        F = F + R.T @ Fk
    d = basis.is_dof
    return DenseSystem(K[d][:, d].toarray(), M[d][:, d].toarray(), F[d], basis)


def dense_solve(system: DenseSystem | np.ndarray, rhs: np.ndarray | None = None) -> np.ndarray:
    if isinstance(system, DenseSystem):
        A, b = system.stiffness, system.load
    else:
        A, b = system, rhs
    try:
        return sla.cho_solve(sla.cho_factor(A), b)
    except np.linalg.LinAlgError:
        return sla.solve(A, b)


def l2_error(coeffs: np.ndarray, basis: DenseTHBBasis, geometry: GeometryMap,
             y_exact: Callable, nq: int | None = None) -> float:
    """L2 norm of y_h - y over the physical domain, y_h given by DoF coefficients."""
    space = basis.space
    nq = nq or max(space.degrees) + 2
    full = basis.expand(np.asarray(coeffs, dtype=float))
    total = 0.0
    for k, lv in enumerate(space.levels):
        ck = basis.level_maps[k] @ full[: basis.level_maps[k].shape[1]]
        cq = _CellQuadrature(lv, nq)
        cl = _cells_of(space.active_cells[k])
        for s in range(0, cl.shape[0], CHUNK):
            c = cl[s: s + CHUNK]
            X, w, V, _ = cq.chunk(c)
            C, nqp, _ = X.shape
            pts = X.reshape(-1, space.dim)
            omega, _ = weight_terms(geometry, pts)
            yh = np.einsum("cqa,ca->cq", V, ck[cq.local_indices(c)])
            y = y_exact(eval_map(geometry, pts)).reshape(C, nqp)
            total += float(np.sum(w * omega.reshape(C, nqp) * (yh - y) ** 2))
    return float(np.sqrt(total))

"""Block TT-GMRES with left preconditioning.

Krylov vectors are tuples of TT tensors (one per block of a BlockSystem) and
are rounded after every update. Preconditioners solve with the diagonal
blocks, or with their diagonals, either densely (small blocks) or with a
two-site alternating least-squares sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod, sqrt

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .assembly import BlockSystem
from .tensor_train import (TTMatrix, TTVector, tt_add, tt_dot, tt_from_dense, tt_norm, tt_round,
                           tt_scale, tt_to_dense, tt_zeros, ttm_apply, ttm_diag, ttm_diag_from)

DENSE_BLOCK_CAP = 4000
LOCAL_DENSE_CAP = 2500


@dataclass(frozen=True, eq=False)
class BlockVector:
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def __add__(self, other):
        return BlockVector(tt_add(a, b) for a, b in zip(self.blocks, other.blocks))

    def __sub__(self, other):
        return BlockVector(tt_add(a, tt_scale(b, -1.0)) for a, b in zip(self.blocks, other.blocks))

    def scale(self, a: float) -> "BlockVector":
        return BlockVector(tt_scale(b, a) for b in self.blocks)

    def dot(self, other) -> float:
        return sum(tt_dot(a, b) for a, b in zip(self.blocks, other.blocks))

    def norm(self) -> float:
        return sqrt(sum(tt_norm(b) ** 2 for b in self.blocks))

    def round(self, tol: float) -> "BlockVector":
        return BlockVector(tt_round(b, tol) for b in self.blocks)

    @classmethod
    def zeros_like(cls, other: "BlockVector") -> "BlockVector":
        return cls(tt_zeros(b.mode_sizes) for b in other.blocks)


def block_matvec(system: BlockSystem, x: BlockVector, tol: float) -> BlockVector:
    out = []
    for row in system.blocks:
        acc = None
        for A, xj in zip(row, x.blocks):
            t = ttm_apply(A, xj)
            acc = t if acc is None else tt_round(tt_add(acc, t), tol)
        out.append(tt_round(acc, tol))
    return BlockVector(out)


# ---------------------------------------------------------------- inner solvers

def _right_orthogonalize(cores):
    cores = [np.array(c) for c in cores]
    for d in range(len(cores) - 1, 0, -1):
        r0, n, r1 = cores[d].shape
        q, r = np.linalg.qr(cores[d].reshape(r0, n * r1).T)
        cores[d] = q.T.reshape(q.shape[1], n, r1)
        cores[d - 1] = np.tensordot(cores[d - 1], r.T, axes=(2, 0))
    return cores


def _left_step(phi, x, A):
    return np.einsum("iaj,imk,amnb,jnl->kbl", phi, x, A, x, optimize=True)


def _right_step(psi, x, A):
    return np.einsum("imk,amnb,jnl,kbl->iaj", x, A, x, psi, optimize=True)


def _left_rhs(phi, x, b):
    return np.einsum("ia,imk,amb->kb", phi, x, b, optimize=True)


def _right_rhs(psi, x, b):
    return np.einsum("imk,amb,kb->ia", x, b, psi, optimize=True)


def als_solve(A: TTMatrix, b: TTVector, tol: float, nswp: int = 20, x0: TTVector | None = None,
              rmax: int | None = None):
    """Two-site alternating least-squares solve of A x = b for symmetric positive definite A.

    Returns (x, relative residual, sweeps).
    """
    D = A.ndim
    bn = tt_norm(b)
    if bn == 0.0:
        return tt_zeros(b.mode_sizes), 0.0, 0
    if D == 1:
        M = tt_to_dense(A)
        x = np.linalg.solve(M, tt_to_dense(b))
        return TTVector([x.reshape(1, -1, 1)]), 0.0, 0
    x = list(_right_orthogonalize((x0 or b).cores))
    Ac, bc = A.cores, b.cores
    phiA = [None] * (D + 1)
    phib = [None] * (D + 1)
    phiA[0] = np.ones((1, 1, 1))
    phib[0] = np.ones((1, 1))
    phiA[D] = np.ones((1, 1, 1))
    phib[D] = np.ones((1, 1))
    for d in range(D - 1, 0, -1):
        phiA[d] = _right_step(phiA[d + 1], x[d], Ac[d])
        phib[d] = _right_rhs(phib[d + 1], x[d], bc[d])
    delta = tol / sqrt(D - 1) / 4
    res = np.inf
    sweeps = 0
    for sweep in range(nswp):
        sweeps = sweep + 1
        # forward over k < D-2, then backward from D-2: phiA[k] holds the left interface of
        # cores < k while k is ahead of the sweep, the right interface of cores >= k behind it
        order = [(k, True) for k in range(D - 2)] + [(k, False) for k in range(D - 2, -1, -1)]
        for k, forward in order:
            L, R = phiA[k], phiA[k + 2]
            A1, A2 = Ac[k], Ac[k + 1]
            rhs = np.einsum("ia,amb,bnc,jc->imnj", phib[k], bc[k], bc[k + 1], phib[k + 2],
                            optimize=True)
            shape = rhs.shape
            n = rhs.size
            guess = np.einsum("imk,knj->imnj", x[k], x[k + 1])
            if n <= LOCAL_DENSE_CAP:
                M = np.einsum("iaj,amnb,bpqc,kcl->impkjnql", L, A1, A2, R, optimize=True)
                M = M.reshape(n, n)
                sol = np.linalg.solve(0.5 * (M + M.T), rhs.ravel())
            else:
                def mv(v, L=L, A1=A1, A2=A2, R=R):
                    X = v.reshape(shape)
                    return np.einsum("iaj,amnb,bpqc,kcl,jnql->impk", L, A1, A2, R, X,
                                     optimize=True).ravel()
                op = spla.LinearOperator((n, n), matvec=mv, dtype=float)
                sol, _ = spla.cg(op, rhs.ravel(), x0=guess.ravel(), rtol=tol * 1e-2, maxiter=500)
            sol = sol.reshape(shape[0] * shape[1], shape[2] * shape[3])
            u, s, vt = np.linalg.svd(sol, full_matrices=False)
            tail = np.sqrt(np.cumsum((s ** 2)[::-1]))[::-1]
            keep = np.nonzero(tail > delta * np.linalg.norm(s))[0]
            r = int(keep[-1]) + 1 if keep.size else 1
            if rmax is not None:
                r = min(r, rmax)
            if forward:
                x[k] = u[:, :r].reshape(shape[0], shape[1], r)
                x[k + 1] = (s[:r, None] * vt[:r]).reshape(r, shape[2], shape[3])
                phiA[k + 1] = _left_step(phiA[k], x[k], Ac[k])
                phib[k + 1] = _left_rhs(phib[k], x[k], bc[k])
            else:
                x[k] = (u[:, :r] * s[:r]).reshape(shape[0], shape[1], r)
                x[k + 1] = vt[:r].reshape(r, shape[2], shape[3])
                phiA[k + 1] = _right_step(phiA[k + 2], x[k + 1], Ac[k + 1])
                phib[k + 1] = _right_rhs(phib[k + 2], x[k + 1], bc[k + 1])
        xt = TTVector(x)
        res = tt_norm(tt_add(ttm_apply(A, xt), tt_scale(b, -1.0))) / bn
        if res <= tol:
            break
    return tt_round(TTVector(x), tol / 4), float(res), sweeps


# ---------------------------------------------------------------- preconditioners

@dataclass(frozen=True, eq=False)
class _DenseBlockSolve:
    factor: tuple
    modes: tuple

    def __call__(self, r: TTVector, tol: float) -> TTVector:
        v = tt_to_dense(r).ravel(order="F")
        z = sla.cho_solve(self.factor, v)
        return tt_from_dense(z.reshape(self.modes, order="F"), tol)


@dataclass(frozen=True, eq=False)
class _ALSBlockSolve:
    op: TTMatrix
    nswp: int = 20

    def __call__(self, r: TTVector, tol: float) -> TTVector:
        return als_solve(self.op, r, tol, self.nswp)[0]


@dataclass(frozen=True, eq=False)
class _DenseDiagSolve:
    diag: np.ndarray  # dense, shape = modes

    def __call__(self, r: TTVector, tol: float) -> TTVector:
        return tt_from_dense(tt_to_dense(r) / self.diag, tol)


@dataclass(frozen=True, eq=False)
class Preconditioner:
    kind: str
    payload: tuple
    inner_tol: float
    stats: dict = field(default_factory=dict)

    def apply(self, r: BlockVector) -> BlockVector:
        if self.kind == "none":
            return r
        return BlockVector(solve(b, self.inner_tol) for solve, b in zip(self.payload, r.blocks))


def identity_preconditioner() -> Preconditioner:
    return Preconditioner("none", (), 0.0)


def build_precond_blockdiag(system: BlockSystem, inner_tol: float,
                            dense_cap: int = DENSE_BLOCK_CAP, nswp: int = 20) -> Preconditioner:
    """Solve with each diagonal block of the system."""
    payload = []
    for i in range(system.nblocks):
        A = system.blocks[i][i]
        if prod(A.row_sizes) <= dense_cap:
            M = tt_to_dense(A)
            payload.append(_DenseBlockSolve(sla.cho_factor(0.5 * (M + M.T)), A.row_sizes))
        else:
            payload.append(_ALSBlockSolve(A, nswp))
    return Preconditioner("block", tuple(payload), inner_tol)


def build_precond_jacobi(system: BlockSystem, inner_tol: float = 1e-10,
                         dense_cap: int = DENSE_BLOCK_CAP, nswp: int = 20) -> Preconditioner:
    """Divide by the diagonal of each diagonal block."""
    payload = []
    for i in range(system.nblocks):
        d = ttm_diag(system.blocks[i][i])
        if prod(d.mode_sizes) <= dense_cap:
            payload.append(_DenseDiagSolve(tt_to_dense(d)))
        else:
            payload.append(_ALSBlockSolve(ttm_diag_from(d), nswp))
    return Preconditioner("jacobi", tuple(payload), inner_tol)


def build_preconditioner(system: BlockSystem, kind: str, inner_tol: float, **kw) -> Preconditioner:
    if kind == "block":
        return build_precond_blockdiag(system, inner_tol, **kw)
    if kind == "jacobi":
        return build_precond_jacobi(system, inner_tol, **kw)
    if kind == "none":
        return identity_preconditioner()
    raise ValueError(f"unknown preconditioner {kind!r}")


# ---------------------------------------------------------------- GMRES

@dataclass(frozen=True, eq=False)
class GMRESResult:
    x: BlockVector
    iterations: int
    history: tuple  # relative preconditioned residual, starting with the initial one
    converged: bool
    breakdown: bool


def solve_gmres(system: BlockSystem, rhs: BlockVector | None = None, eps: float = 1e-6,
                restart: int = 30, maxit: int = 900, prec: Preconditioner | None = None,
                x0: BlockVector | None = None, round_tol: float | None = None) -> GMRESResult:
    """Restarted, left-preconditioned GMRES on block TT vectors."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    b = rhs if rhs is not None else BlockVector(system.rhs)
    P = prec or identity_preconditioner()
    rt = eps / 10 if round_tol is None else round_tol
    x = x0 if x0 is not None else BlockVector.zeros_like(b)
    z0 = P.apply(b).round(rt)
    beta0 = z0.norm()
    if beta0 == 0.0:
        return GMRESResult(BlockVector.zeros_like(b), 0, (0.0,), True, False)
    history: list[float] = []
    it = 0
    converged = breakdown = False
    first = x0 is None
    while True:
        if first:
            r = z0
            first = False
        else:
            r = P.apply((b - block_matvec(system, x, rt)).round(rt)).round(rt)
        beta = r.norm()
        rel = beta / beta0
        if not history:
            history.append(rel)
        if rel <= eps:
            converged = True
            break
        if it >= maxit or breakdown:
            break
        V = [r.scale(1.0 / beta)]
        H = np.zeros((restart + 1, restart))
        cs, sn = np.zeros(restart), np.zeros(restart)
        g = np.zeros(restart + 1)
        g[0] = beta
        k = 0
        for j in range(restart):
            w = P.apply(block_matvec(system, V[j], rt)).round(rt)
            w0 = w.norm()
            for _ in range(2):  # modified Gram-Schmidt, one reorthogonalization pass
                for i in range(j + 1):
                    h = w.dot(V[i])
                    H[i, j] += h
                    w = (w - V[i].scale(h)).round(rt)
            hn = w.norm()
            H[j + 1, j] = hn
            it += 1
            k = j + 1
            for i in range(j):
                a, c = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * a + sn[i] * c
                H[i + 1, j] = -sn[i] * a + cs[i] * c
            den = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = (1.0, 0.0) if den == 0 else (H[j, j] / den, H[j + 1, j] / den)
            H[j, j] = den
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            est = abs(g[j + 1]) / beta0
            history.append(est)
            if hn <= 1e-14 * max(w0, 1e-300):
                breakdown = True
            if est <= eps or breakdown or it >= maxit:
                break
            V.append(w.scale(1.0 / hn))
        y = sla.solve_triangular(H[:k, :k], g[:k])
        upd = x
        for i in range(k):
            upd = (upd + V[i].scale(y[i])).round(rt)
        x = upd
    return GMRESResult(x, it, tuple(history), converged, breakdown)

"""Geometry maps, pulled-back weight functions and separable spline interpolation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .splines import basis_matrix, dyadic_refine, greville, knots_from_breakpoints
from .splines import open_uniform_knots
from .tensor_train import TTVector, tt_from_dense, tt_zeros

SAMPLE_CAP = 10_000_000


@dataclass(frozen=True, eq=False)
class GeometryMap:
    """Tensor-product B-spline map from [0,1]^D to R^D.

    ``control_points`` has shape (n1, ..., nD, D).
    """

    knots: tuple
    control_points: np.ndarray

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float)
        D = len(self.knots)
        if cp.shape != tuple(kv.n for kv in self.knots) + (D,):
            raise ValueError(f"control points of shape {cp.shape} do not fit the knot vectors")
        object.__setattr__(self, "knots", tuple(self.knots))
        object.__setattr__(self, "control_points", cp)

    @property
    def dim(self) -> int:
        return len(self.knots)


def identity_map(dim: int = 3, scale: Sequence[float] | None = None) -> GeometryMap:
    """Trilinear map whose control points sit at the (optionally scaled) cube corners."""
    kv = open_uniform_knots(1, 1)
    scale = np.ones(dim) if scale is None else np.asarray(scale, dtype=float)
    cp = np.zeros((2,) * dim + (dim,))
    for corner in product((0, 1), repeat=dim):
        cp[corner] = np.asarray(corner, dtype=float) * scale
    return GeometryMap((kv,) * dim, cp)


def _contract(cp: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """sum_i cp[i1..iD, :] prod_d mats[d][k, i_d] for every point k."""
    out = np.einsum("ka,a...->k...", mats[0], cp)
    for m in mats[1:]:
        out = np.einsum("kb,kb...->k...", m, out)
    return out


def eval_map(g: GeometryMap, x) -> np.ndarray:
    """Physical coordinates of parametric points x of shape (N, D)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mats = [basis_matrix(kv, x[:, d]) for d, kv in enumerate(g.knots)]
    return _contract(g.control_points, mats)


def jacobian(g: GeometryMap, x) -> np.ndarray:
    """J[k, a, b] = dF_a / dx_b at point k."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    vals = [basis_matrix(kv, x[:, d]) for d, kv in enumerate(g.knots)]
    ders = [basis_matrix(kv, x[:, d], 1) for d, kv in enumerate(g.knots)]
    cols = []
    for b in range(g.dim):
        mats = [ders[d] if d == b else vals[d] for d in range(g.dim)]
        cols.append(_contract(g.control_points, mats))
    return np.stack(cols, axis=-1)


def weight_terms(g: GeometryMap, x):
    """omega = |det J| and Q = omega (J^T J)^-1 at points x; shapes (N,) and (N, D, D)."""
    J = jacobian(g, x)
    det = np.linalg.det(J)
    if np.any(np.abs(det) < 1e-14):
        raise ValueError("singular geometry Jacobian")
    omega = np.abs(det)
    G = np.einsum("kab,kac->kbc", J, J)
    Q = omega[:, None, None] * np.linalg.inv(G)
    return omega, 0.5 * (Q + Q.transpose(0, 2, 1))


@dataclass(frozen=True, eq=False)
class InterpolationSpace:
    knots: tuple

    @property
    def dim(self) -> int:
        return len(self.knots)

    @property
    def sizes(self) -> tuple:
        return tuple(kv.n for kv in self.knots)

    @cached_property
    def nodes(self) -> tuple:
        return tuple(greville(kv) for kv in self.knots)

    @cached_property
    def collocation(self) -> tuple:
        return tuple(basis_matrix(kv, x) for kv, x in zip(self.knots, self.nodes))

    @cached_property
    def inverse_collocation(self) -> tuple:
        return tuple(np.linalg.inv(B) for B in self.collocation)


def uniform_space(p: int, n: int, dim: int = 3) -> InterpolationSpace:
    """Open uniform spline space with n functions of degree p per dimension."""
    return InterpolationSpace((open_uniform_knots(p, n - p),) * dim)


def weight_space(g: GeometryMap) -> InterpolationSpace:
    """Geometry knots with degree raised by one and one dyadic refinement."""
    kvs = []
    for kv in g.knots:
        fine = dyadic_refine(kv)
        kvs.append(knots_from_breakpoints(kv.degree + 1, fine.breakpoints))
    return InterpolationSpace(tuple(kvs))


@dataclass(frozen=True, eq=False)
class SeparableField:
    space: InterpolationSpace
    coeff: TTVector

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.ones((x.shape[0], 1))
        for d, (kv, c) in enumerate(zip(self.space.knots, self.coeff.cores)):
            B = basis_matrix(kv, x[:, d])
            v = np.einsum("ka,anc,kn->kc", v, c, B)
        return v[:, 0]

    @property
    def is_zero(self) -> bool:
        return any(not np.any(c) for c in self.coeff.cores)


def apply_inverse_collocation(samples: TTVector, space: InterpolationSpace) -> TTVector:
    """Solve the Kronecker collocation system core by core."""
    return TTVector([np.einsum("ij,ajb->aib", Binv, c)
                     for Binv, c in zip(space.inverse_collocation, samples.cores)])


def sample_grid(sampler: Callable, space: InterpolationSpace, cap: int = SAMPLE_CAP) -> np.ndarray:
    n = int(np.prod(space.sizes))
    if n > cap:
        raise ValueError(f"Greville grid has {n} nodes, above the cap of {cap}; "
                         "use a smaller interpolation space")
    grids = np.meshgrid(*space.nodes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return np.asarray(sampler(pts), dtype=float).reshape(space.sizes)


def interpolate_samples(S: np.ndarray, space: InterpolationSpace, tol: float) -> SeparableField:
    """Compress Greville samples and solve for spline coefficients."""
    smax = np.abs(S).max()
    if smax == 0.0:
        return SeparableField(space, tt_zeros(space.sizes))
    # tightened so that the pointwise error at the nodes is at most tol * max|S|
    rel = tol * smax / np.linalg.norm(S)
    return SeparableField(space, apply_inverse_collocation(tt_from_dense(S, rel), space))


def interpolate_field(sampler: Callable, space: InterpolationSpace, tol: float,
                      cap: int = SAMPLE_CAP) -> SeparableField:
    """Spline interpolant of ``sampler`` (called with an (N, D) array of points)."""
    return interpolate_samples(sample_grid(sampler, space, cap), space, tol)


def interpolate_weight_and_metric(g: GeometryMap, space: InterpolationSpace, tol: float,
                                  cap: int = SAMPLE_CAP):
    """Fields for omega and the D x D entries of Q (Q[k][l] is Q[l][k])."""
    n = int(np.prod(space.sizes))
    if n > cap:
        raise ValueError(f"Greville grid has {n} nodes, above the cap of {cap}")
    grids = np.meshgrid(*space.nodes, indexing="ij")
    pts = np.stack([gr.ravel() for gr in grids], axis=1)
    omega, Q = weight_terms(g, pts)
    D = g.dim
    w = interpolate_samples(omega.reshape(space.sizes), space, tol)
    q = [[None] * D for _ in range(D)]
    for k in range(D):
        for l in range(k, D):
            f = interpolate_samples(Q[:, k, l].reshape(space.sizes), space, tol)
            q[k][l] = q[l][k] = f
    return w, q


def interpolate_source(f: Callable, g: GeometryMap, space: InterpolationSpace, tol: float,
                       cap: int = SAMPLE_CAP) -> SeparableField:
    """Interpolant of x -> f(F(x)) * omega(x); ``f`` takes an (N, D) array of physical points."""
    def sampler(x):
        omega, _ = weight_terms(g, x)
        return f(eval_map(g, x)) * omega
    return interpolate_field(sampler, space, tol, cap)

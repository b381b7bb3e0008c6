"""Experiment harness: refinement schemes, manufactured Poisson problems, metrics and CSV output."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
import time
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import BlockSystem, WeightFields, build_hierarchy, global_system
from .geometry_interp import (SAMPLE_CAP, identity_map, interpolate_source,
                              interpolate_weight_and_metric, uniform_space, weight_space)
from .hierarchy import HierarchicalSpace, build_space
from .oracle import DOF_CAP, dense_assemble, dense_solve, l2_error, thb_basis
from .solver import build_preconditioner, solve_gmres

SCHEMES = ("slab", "nested-slab", "two-corners", "four-corners")
SOLUTIONS = ("sol1", "sol2", "sol3")
PRECONDITIONERS = ("block", "jacobi", "none")
CSV_COLUMNS = ("scheme", "solution", "p", "L", "k", "eps", "approach", "prec", "assembly_s",
               "solve_s", "iters", "converged", "l2_error", "bytes_K", "bytes_y", "oracle_l2",
               "oracle_op_delta")
OP_DELTA_LIMIT = 1e-6


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- refinement schemes

def default_m0(scheme: str, p: int, k: int = 0) -> int:
    if scheme == "slab":
        return 6 + 2 * k
    if scheme == "nested-slab":
        return p + 1
    return 2 * p + 1


def make_marks(scheme: str, p: int, level: int, dims) -> np.ndarray:
    """Boolean mask of the level cells refined by ``scheme`` (0-based cell indices)."""
    dims = tuple(int(m) for m in dims)
    D = len(dims)
    out = np.zeros(dims, dtype=bool)
    if scheme == "slab":
        if level != 0:
            raise ConfigError("the slab scheme refines level 0 only")
        if dims[0] % 2:
            raise ConfigError("the slab scheme needs an even cell count")
        out[: dims[0] // 2] = True
    elif scheme == "nested-slab":
        out[: dims[0] // 2 ** (level + 1)] = True
    elif scheme in ("two-corners", "four-corners"):
        s = p + level - 1
        if s < 1 or any(2 * s > m for m in dims):
            raise ConfigError(f"corner blocks of side {s} do not fit a grid of {dims}")
        lo = (slice(0, s),) * D
        out[lo] = True
        if scheme == "two-corners":
            out[tuple(slice(m - s, m) for m in dims)] = True
        else:
            for d in range(D):
                sl = list(lo)
                sl[d] = slice(dims[d] - s, dims[d])
                out[tuple(sl)] = True
    else:
        raise ConfigError(f"unknown scheme {scheme!r}")
    return out


def scheme_space(scheme: str, p: int, L: int, m0: int, dim: int = 3) -> HierarchicalSpace:
    marks = []
    m = m0
    for level in range(L - 1):
        marks.append(make_marks(scheme, p, level, (m,) * dim))
        m *= 2
    return build_space((p,) * dim, (m0,) * dim, marks)


# ---------------------------------------------------------------- manufactured problems

@dataclass(frozen=True)
class Manufactured:
    """y = y0 exp(phi) with y0 = prod x_d (x_d - 1); ``f`` is -Laplace(y)."""

    name: str
    phi: Callable  # x -> (phi, grad phi, laplace phi)

    def y(self, x):
        x = np.atleast_2d(x)
        return _y0(x)[0] * np.exp(self.phi(x)[0])

    def f(self, x):
        x = np.atleast_2d(x)
        y0, g0, l0 = _y0(x)
        ph, gp, lp = self.phi(x)
        lap = np.exp(ph) * (l0 + 2 * np.sum(g0 * gp, axis=1) + y0 * (lp + np.sum(gp * gp, axis=1)))
        return -lap


def _y0(x):
    h = x * (x - 1)
    dh = 2 * x - 1
    y0 = np.prod(h, axis=1)
    grad = np.stack([dh[:, d] * np.prod(np.delete(h, d, axis=1), axis=1)
                     for d in range(x.shape[1])], axis=1)
    lap = sum(2 * np.prod(np.delete(h, d, axis=1), axis=1) for d in range(x.shape[1]))
    return y0, grad, lap


def _product_phi(centers, scale):
    """phi = -scale * prod_i |x - c_i|^2 with gradient and Laplacian."""
    centers = [np.asarray(c, dtype=float) for c in centers]

    def phi(x):
        D = x.shape[1]
        g = [np.sum((x - c) ** 2, axis=1) for c in centers]
        dg = [2 * (x - c) for c in centers]
        n = len(g)

        def others(skip):
            out = np.ones(x.shape[0])
            for i in range(n):
                if i not in skip:
                    out = out * g[i]
            return out

        val = others(())
        grad = sum(others((i,))[:, None] * dg[i] for i in range(n))
        lap = sum(others((i,)) * 2 * D for i in range(n))
        for i, j in combinations(range(n), 2):
            lap = lap + 2 * others((i, j)) * np.sum(dg[i] * dg[j], axis=1)
        return -scale * val, -scale * grad, -scale * lap

    return phi


def _phi_sol1(x):
    grad = np.zeros_like(x)
    grad[:, 0] = -2 * x[:, 0]
    return -x[:, 0] ** 2, grad, np.full(x.shape[0], -2.0)


def manufactured_problem(solution: str) -> Manufactured:
    if solution == "sol1":
        return Manufactured("sol1", _phi_sol1)
    if solution == "sol2":
        return Manufactured("sol2", _product_phi([np.zeros(3), np.ones(3)], 10.0))
    if solution == "sol3":
        return Manufactured("sol3", _product_phi([np.zeros(3), np.eye(3)[0], np.eye(3)[1],
                                                  np.eye(3)[2]], 1.0))
    raise ConfigError(f"unknown solution {solution!r}")


# ---------------------------------------------------------------- memory estimate

def estimate_bytes(value) -> int:
    """8 bytes per stored float or integer, walking containers; shared objects count once."""
    seen = set()

    def walk(v):
        if v is None or isinstance(v, (str, bytes)):
            return 0
        if isinstance(v, (bool, int, float, np.number, np.bool_)):
            return 8
        if id(v) in seen:
            return 0
        seen.add(id(v))
        if isinstance(v, np.ndarray):
            return 8 * v.size if v.dtype != object else sum(walk(e) for e in v.ravel())
        if sp.issparse(v):
            v = v.tocsr()
            return 8 * (v.data.size + v.indices.size + v.indptr.size)
        if dataclasses.is_dataclass(v):
            return sum(walk(getattr(v, f.name)) for f in dataclasses.fields(v))
        if isinstance(v, dict):
            return sum(walk(e) for e in v.values())
        if isinstance(v, (list, tuple, set, frozenset)):
            return sum(walk(e) for e in v)
        return 0

    return walk(value)


# ---------------------------------------------------------------- experiments

@dataclass
class ExperimentConfig:
    solution: str = "sol1"
    scheme: str = "slab"
    degree: int = 3
    levels: int = 2
    k: int = 0
    eps: float = 1e-7
    approach: int = 1
    prec: str = "block"
    m0: int | None = None
    source_n: int = 40
    source_degree: int = 3
    oracle: bool = False
    max_level_cells: int = 96
    max_dofs: int = 200_000

    @property
    def cells0(self) -> int:
        return self.m0 if self.m0 is not None else default_m0(self.scheme, self.degree, self.k)

    def validate(self) -> None:
        if self.solution not in SOLUTIONS:
            raise ConfigError(f"solution must be one of {SOLUTIONS}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.prec not in PRECONDITIONERS:
            raise ConfigError(f"prec must be one of {PRECONDITIONERS}")
        if self.approach not in (1, 2):
            raise ConfigError("approach must be 1 or 2")
        if not 1 <= self.degree <= 5:
            raise ConfigError("degree must lie in 1..5")
        if self.levels < 1:
            raise ConfigError("at least one level is needed")
        if self.scheme == "slab" and self.levels > 2:
            raise ConfigError("the slab scheme has at most two levels")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.cells0 < 1:
            raise ConfigError("m0 must be positive")
        finest = self.cells0 * 2 ** (self.levels - 1)
        if finest > self.max_level_cells:
            raise ConfigError(f"finest level has {finest} cells per direction, "
                              f"above the cap of {self.max_level_cells}")
        if self.source_n ** 3 > SAMPLE_CAP or self.source_n <= self.source_degree:
            raise ConfigError(f"source space size {self.source_n} is invalid or above the sample cap")


@dataclass
class MetricsRow:
    scheme: str
    solution: str
    p: int
    L: int
    k: int
    eps: float
    approach: int
    prec: str
    assembly_s: float
    solve_s: float
    iters: int
    converged: bool
    l2_error: float
    bytes_K: int
    bytes_y: int
    oracle_l2: float | None = None
    oracle_op_delta: float | None = None
    history: tuple = field(default=(), repr=False)
    flagged: bool = False

    def csv_row(self) -> list:
        out = []
        for name in CSV_COLUMNS:
            v = getattr(self, name)
            out.append("" if v is None else (int(v) if isinstance(v, bool) else v))
        return out


@dataclass
class ExperimentResult:
    row: MetricsRow
    system: BlockSystem
    coefficients: np.ndarray  # global DoF vector


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    problem = manufactured_problem(cfg.solution)
    space = scheme_space(cfg.scheme, cfg.degree, cfg.levels, cfg.cells0)
    if space.ndofs() > cfg.max_dofs:
        raise ConfigError(f"{space.ndofs()} DoFs exceed the cap of {cfg.max_dofs}")
    if cfg.oracle and space.ndofs() > DOF_CAP:
        raise ConfigError(f"{space.ndofs()} DoFs exceed the oracle cap of {DOF_CAP}")
    geometry = identity_map(space.dim)
    tol = cfg.eps * 1e-2

    t0 = time.perf_counter()
    w, q = interpolate_weight_and_metric(geometry, weight_space(geometry), tol)
    src = interpolate_source(problem.f, geometry,
                             uniform_space(cfg.source_degree, cfg.source_n, space.dim), tol)
    h = build_hierarchy(space, WeightFields.from_fields(w, q), src, tol)
    system = global_system(h, cfg.approach)
    t1 = time.perf_counter()
    prec = build_preconditioner(system, cfg.prec, tol)
    res = solve_gmres(system, eps=cfg.eps, prec=prec)
    t2 = time.perf_counter()

    coeffs = system.gather(res.x.blocks)
    basis = thb_basis(space)
    err = l2_error(coeffs, basis, geometry, problem.y)
    row = MetricsRow(cfg.scheme, cfg.solution, cfg.degree, cfg.levels, cfg.k, cfg.eps, cfg.approach,
                     cfg.prec, t1 - t0, t2 - t1, res.iterations, res.converged, err,
                     estimate_bytes(system.blocks), estimate_bytes(res.x), history=res.history)
    if cfg.oracle:
        ds = dense_assemble(space, geometry, problem.f, basis)
        row.oracle_l2 = l2_error(dense_solve(ds), basis, geometry, problem.y)
        K = ds.stiffness
        row.oracle_op_delta = float(np.linalg.norm(system.dense_dofs() - K) / np.linalg.norm(K))
        row.flagged = row.oracle_op_delta > OP_DELTA_LIMIT
    return ExperimentResult(row, system, coeffs)


def write_csv(path, rows) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        wr = csv.writer(fh)
        if new:
            wr.writerow(CSV_COLUMNS)
        for r in rows:
            wr.writerow(r.csv_row())


def write_history(path, history) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("iteration", "residual"))
        for i, r in enumerate(history):
            wr.writerow((i, r))


# ---------------------------------------------------------------- command line

def read_config(path) -> dict:
    """Parse a key=value file; keys use the long flag names (dashes or underscores)."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off", ""):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lowrank-thb",
                                 description="Low-rank THB-spline Poisson experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment and append a CSV row")
    run.add_argument("--config", help="key=value file with defaults for the flags below")
    run.add_argument("--solution", choices=SOLUTIONS, default="sol1")
    run.add_argument("--scheme", choices=SCHEMES, default="slab")
    run.add_argument("--degree", type=int, default=3)
    run.add_argument("--levels", type=int, default=2)
    run.add_argument("--k", type=int, default=0, help="slab size index: m0 = 6 + 2k")
    run.add_argument("--eps", type=float, default=1e-7)
    run.add_argument("--approach", type=int, choices=(1, 2), default=1)
    run.add_argument("--prec", choices=PRECONDITIONERS, default="block")
    run.add_argument("--m0", type=int, default=None, help="override the initial cell count")
    run.add_argument("--source-n", type=int, default=40, help="source space size per direction")
    run.add_argument("--oracle", type=_bool, nargs="?", const=True, default=False)
    run.add_argument("--out", default=None, help="CSV file (appended, header written once)")
    run.add_argument("--history", default=None, help="CSV file for the residual history")
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        defaults = read_config(args.config)
        run = ap._subparsers._group_actions[0].choices["run"]
        known = {a.dest for a in run._actions}
        unknown = set(defaults) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        run.set_defaults(**{k: v for k, v in defaults.items()})
        args = ap.parse_args(argv)
        # values taken from the file arrive as strings
        for a in run._actions:
            v = getattr(args, a.dest, None)
            if isinstance(v, str) and a.type is not None and a.dest in defaults:
                setattr(args, a.dest, a.type(v))
    return args


def config_from_args(args) -> ExperimentConfig:
    return ExperimentConfig(solution=args.solution, scheme=args.scheme, degree=args.degree,
                            levels=args.levels, k=args.k, eps=args.eps, approach=args.approach,
                            prec=args.prec, m0=args.m0, source_n=args.source_n,
                            oracle=bool(args.oracle))


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        cfg = config_from_args(args)
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    row = result.row
    wr = csv.writer(sys.stdout)
    wr.writerow(CSV_COLUMNS)
    wr.writerow(row.csv_row())
    if args.out:
        write_csv(args.out, [row])
    if args.history:
        write_history(args.history, row.history)
    if row.flagged:
        print(f"warning: oracle operator delta {row.oracle_op_delta:.3e} above {OP_DELTA_LIMIT:g}",
              file=sys.stderr)
    if not row.converged:
        print(f"warning: GMRES stopped after {row.iters} iterations without converging",
              file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

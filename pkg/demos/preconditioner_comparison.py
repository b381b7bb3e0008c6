"""Compare block-diagonal and Jacobi preconditioning on the two-level slab problem.

Run with ``python demos/preconditioner_comparison.py``. Each row is one
solve; tighter tolerances need more GMRES iterations, and the block-diagonal
preconditioner needs far fewer than Jacobi.
"""

from lowrank_thb.cli import ExperimentConfig, run_experiment


def main():
    print(f"{'eps':>8} {'prec':>7} {'iters':>6} {'L2 error':>12} {'K bytes':>9} {'y bytes':>9}")
    for eps in (1e-3, 1e-5, 1e-7):
        for prec in ("block", "jacobi"):
            cfg = ExperimentConfig(solution="sol1", scheme="slab", degree=3, levels=2, eps=eps,
                                   prec=prec)
            r = run_experiment(cfg).row
            print(f"{eps:8.0e} {prec:>7} {r.iters:6d} {r.l2_error:12.4e} {r.bytes_K:9d} "
                  f"{r.bytes_y:9d}")


if __name__ == "__main__":
    main()

"""Walk through the four refinement schemes at desk scale.

For each scheme this prints the hierarchical DoF count, the block structure of
the assembled TT system (with core ranks), and the solve outcome checked
against the dense oracle.
"""

from lowrank_thb.cli import ExperimentConfig, run_experiment

CASES = [
    ("slab", "sol1", 3, 2),
    ("nested-slab", "sol1", 3, 3),
    ("two-corners", "sol2", 2, 3),
    ("four-corners", "sol3", 2, 3),
]


def main():
    for scheme, solution, p, L in CASES:
        cfg = ExperimentConfig(solution=solution, scheme=scheme, degree=p, levels=L, eps=1e-6,
                               oracle=True)
        res = run_experiment(cfg)
        r = res.row
        print(f"== {scheme}, {solution}, p={p}, L={L}: {res.system.ndofs} dofs")
        print(res.system.report(), end="")
        print(f"   {r.iters} iterations, L2 error {r.l2_error:.4e} "
              f"(dense oracle {r.oracle_l2:.4e}), operator deviation {r.oracle_op_delta:.1e}\n")


if __name__ == "__main__":
    main()

"""CG iteration counts on the unit disk with and without IC(1) preconditioning.

The stiffness of the discrete operator grows like h^(-2s), so the benefit of
the sparse-stencil preconditioner is largest for s close to 1.
"""
import numpy as np

from gofd.mesh import generate_benchmark_mesh
from gofd.problems import make_benchmark, solve_benchmark

PATTERNS = ("none", "stencil5", "stencil9")


def main(rings=(10, 20, 41)):
    for s in (0.5, 0.9):
        problem = make_benchmark(2, s)
        print(f"s = {s}")
        print(f"  {'N_e':>6s} " + " ".join(f"{p:>9s}" for p in PATTERNS) + "   max solution gap")
        for n in rings:
            mesh = generate_benchmark_mesh("disk", n)
            counts, solutions = [], []
            for p in PATTERNS:
                u, rep = solve_benchmark(problem, mesh, precond=None if p == "none" else p)
                counts.append(rep.iterations)
                solutions.append(u)
            gap = max(np.linalg.norm(u - solutions[0]) / np.linalg.norm(solutions[0]) for u in solutions[1:])
            print(f"  {mesh.n_elements:6d} " + " ".join(f"{c:9d}" for c in counts) + f"   {gap:.1e}")


if __name__ == "__main__":
    main()

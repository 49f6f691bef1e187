"""Watch the overlap-consensus ADMM converge on one subproblem.

The confusion matrices are fixed to the truth, so the inner loop solves a
strongly convex problem.  We print the consensus residual and the normalized
optimality gap against a long reference run.
"""

from regiontomo.instance import build_instance
from regiontomo.regions import build_geometry
from regiontomo.solver import SolverConfig, optimality_gap_trace


def main():
    inst = build_instance(build_geometry("ladder"), seed=0)
    # inner_tol tiny so the loop runs the whole window
    cfg = SolverConfig(mode="oracle", inner_tol=1e-300, inner_max=60)
    r_cons, g_opt, j_min = optimality_gap_trace(inst, cfg, reference_iterations=1000)
    print(f"J_min = {j_min:.6e}")
    print(f"{'l':>3}  {'r_cons':>10}  {'g_opt':>10}")
    for ell, (r, g) in enumerate(zip(r_cons, g_opt), start=1):
        if ell <= 5 or ell % 10 == 0:
            print(f"{ell:3d}  {r:10.3e}  {g:10.3e}")


if __name__ == "__main__":
    main()

"""Linearized iteration on a short horizon: the sup-in-time distance X^n between iterates.

    python3 demos/picard_contraction.py [n] [T]
"""

import sys

from nonlocal_nsk.dynamics import PhysParams
from nonlocal_nsk.experiments import default_initial_state
from nonlocal_nsk.picard import eta_consistency, picard_solve
from nonlocal_nsk.spectral import make_grid


def main(n: int = 32, T: float = 0.05) -> None:
    init = default_initial_state(make_grid(2, n))
    it, rep = picard_solve(init, PhysParams(), T, tol=1e-20)
    ratios = [float("nan")] + rep.ratios
    for i, (x, r) in enumerate(zip(rep.x_sequence, ratios), start=1):
        print(f"iteration {i:2d}  sup X = {x:.3e}  ratio = {r:.3e}")
    print(f"converged={rep.converged} non_contraction={rep.non_contraction}")
    print(f"eta consistency {eta_consistency(it):.2e}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(int(args[0]) if args else 32, float(args[1]) if len(args) > 1 else 0.05)

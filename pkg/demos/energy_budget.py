"""Energy budget of a relaxed run: E(t) - E(0) + int ||grad u||^2 stays at round-off.

    python3 demos/energy_budget.py [n]
"""

import sys

from nonlocal_nsk.dynamics import CFLStep, PhysParams, simulate
from nonlocal_nsk.experiments import default_initial_state, energy_report, max_principle_report
from nonlocal_nsk.spectral import make_grid


def main(n: int = 64) -> None:
    params = PhysParams(kappa=1.0, alpha=16.0)
    traj = simulate(default_initial_state(make_grid(2, n)), params, 0.25, CFLStep(0.5), n_frames=8)
    rep = energy_report(traj)
    print(f"{'t':>8} {'energy':>14} {'dissipated':>14} {'residual':>11}")
    for t, e, d, r in zip(rep.times, rep.energy, rep.dissipation, rep.residual):
        print(f"{t:8.4f} {e:14.10f} {d:14.10f} {r:11.2e}")
    mp = max_principle_report(traj)
    print(f"density range [{mp.rho_min:.6f}, {mp.rho_max:.6f}], overshoot {mp.overshoot:.1e}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 64)

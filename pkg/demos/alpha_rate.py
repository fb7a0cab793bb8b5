"""Relaxed-to-local convergence: sup-in-time errors against alpha and their log-log slopes.

    python3 demos/alpha_rate.py [n]
"""

import sys

from nonlocal_nsk.experiments import SweepConfig, fit_rate, sweep_alpha, sweep_kappa


def main(n: int = 32) -> None:
    cfg = SweepConfig(n=n, t_end=0.1, n_frames=4)
    table = sweep_alpha(cfg, [8, 16, 32, 64])
    print("alpha    " + "  ".join(f"{c:>11}" for c in table.columns))
    for i, a in enumerate(table.values):
        print(f"{a:5.0f}    " + "  ".join(f"{table.columns[c][i]:11.3e}" for c in table.columns))
    for c in table.columns:
        print(f"slope {c}: {fit_rate(table, c).slope:+.3f}")

    kt = sweep_kappa(cfg, [0.1, 0.05, 0.025, 0.0125])
    for c in kt.columns:
        print(f"kappa slope {c}: {fit_rate(kt, c).slope:+.4f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 32)

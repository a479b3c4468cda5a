"""Loading-factor sweep on IEEE-14 with under-frequency shedding.

Each point is warm-started from the previous one. Writes a CSV of loading
factor, frequency deviation, shed fraction and status, and optionally a plot.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from cascadeflow import case_path, load_case
from cascadeflow.network import find_islands, scale_loading
from cascadeflow.stage1 import SolverOptions, shed_mw, solve_island


def sweep(lfs, snap: bool = False, beta: float | None = None) -> list[dict]:
    base = load_case(case_path("ieee14_ufls"))
    opts = SolverOptions(beta_override=beta)
    warm, rows = None, []
    for lf in lfs:
        net = scale_loading(base, float(lf))
        sol = solve_island(net, find_islands(net)[0], opts, warm=warm, snap=snap)
        res = sol.result
        load = sum(ld.p_set for ld in net.loads) * net.base_mva
        row = {"lf": float(lf), "status": res.status.value, "iterations": res.iterations}
        if res.converged:
            row.update(delta_f_hz=res.delta_f, shed_fraction=shed_mw(sol.problem, res) / load,
                       feasibility=res.feasibility.value)
            warm = res.state.named()
        rows.append(row)
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--start", type=float, default=1.0)
    ap.add_argument("--stop", type=float, default=4.2)
    ap.add_argument("--step", type=float, default=0.2)
    ap.add_argument("--snap", action="store_true", help="snap DISCRETE segments at every point")
    ap.add_argument("--beta", type=float, default=None)
    ap.add_argument("--plot", default=None, help="write a PNG of the sweep (needs matplotlib)")
    args = ap.parse_args()
    lfs = np.round(np.arange(args.start, args.stop + 1e-9, args.step), 10)
    rows = sweep(lfs, args.snap, args.beta)
    fields = ["lf", "status", "iterations", "feasibility", "delta_f_hz", "shed_fraction"]
    w = csv.DictWriter(sys.stdout, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.plot:
        import matplotlib.pyplot as plt

        ok = [r for r in rows if "delta_f_hz" in r]
        fig, ax = plt.subplots(2, 1, sharex=True, figsize=(5, 5))
        ax[0].plot([r["lf"] for r in ok], [r["delta_f_hz"] for r in ok], "o-")
        ax[0].set_ylabel("delta f (Hz)")
        ax[1].plot([r["lf"] for r in ok], [r["shed_fraction"] for r in ok], "o-")
        ax[1].set_ylabel("shed fraction")
        ax[1].set_xlabel("loading factor")
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)


if __name__ == "__main__":
    main()

"""Aggregate infeasibility current by area on the three-area fixtures.

``stressed30`` carries a real-power deficit in area 3 and is infeasible
before any contingency; ``cascade30`` needs a tie-line trip to collapse.
"""

from __future__ import annotations

import argparse

from cascadeflow import case_path, load_case
from cascadeflow.cascade import run_cascade
from cascadeflow.network import ContingencyEvent
from cascadeflow.runner import aggregate_infeasibility_by_area


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--case", default="stressed30", choices=["stressed30", "cascade30"])
    ap.add_argument("--event", default=None, help="e.g. trip:branch:39 (default: none)")
    ap.add_argument("--top", type=int, default=6)
    args = ap.parse_args()
    net = load_case(case_path(args.case))
    event = ContingencyEvent.parse(args.event) if args.event else None
    rep = run_cascade(net, event)
    stage = rep.final_stage
    area = {b.id: b.area for b in net.buses}
    print(f"{args.case} / {rep.event}: {rep.outcome.value} after {len(rep.stages)} stage(s)")
    for isl in stage.islands:
        print(f"  island {isl.id}: {isl.status.value}, {len(isl.buses)} buses, delta_f {isl.delta_f_hz}")
    ranked = sorted(((v, b) for isl in stage.islands for b, v in isl.if_by_bus.items()), reverse=True)
    print(f"top {args.top} buses by |I_F|:")
    for v, b in ranked[: args.top]:
        print(f"  bus {b:>3} (area {area[b]}): {v:.4f} pu")
    print("area aggregates:")
    for r in aggregate_infeasibility_by_area(stage, net):
        print(f"  area {r.area}: {r.aggregate_if_pu:.4f} pu over {r.bus_count} buses")


if __name__ == "__main__":
    main()

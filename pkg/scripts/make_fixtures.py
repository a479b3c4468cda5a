"""Regenerate the JSON case fixtures shipped in ``cascadeflow/cases``.

IEEE-14 impedances, loads and dispatch are the public test-system values.
Its branch ratings are synthesized: 150% of the base-case apparent-power
flow, rounded up to the next 5 MVA, with a 20 MVA floor.
"""

from __future__ import annotations

import argparse
import json
import math
from pathlib import Path

CASES = Path(__file__).resolve().parents[1] / "src" / "cascadeflow" / "cases"

IEEE14_BUSES = [  # id, P load MW, Q load MVAr, shunt b MVAr
    (1, 0, 0, 0), (2, 21.7, 12.7, 0), (3, 94.2, 19, 0), (4, 47.8, -3.9, 0), (5, 7.6, 1.6, 0),
    (6, 11.2, 7.5, 0), (7, 0, 0, 0), (8, 0, 0, 0), (9, 29.5, 16.6, 19), (10, 9, 5.8, 0),
    (11, 3.5, 1.8, 0), (12, 6.1, 1.6, 0), (13, 13.5, 5.8, 0), (14, 14.9, 5, 0),
]
IEEE14_GENS = [  # bus, P MW, V set, P max MW, droop MW/Hz, slack
    (1, 232.4, 1.06, 332.4, 15.0, True), (2, 40, 1.045, 140, 5.0, False),
    (3, 0, 1.01, 100, 0, False), (6, 0, 1.07, 100, 0, False), (8, 0, 1.09, 100, 0, False),
]
IEEE14_BRANCHES = [  # from, to, r, x, b, tap
    (1, 2, 0.01938, 0.05917, 0.0528, 1), (1, 5, 0.05403, 0.22304, 0.0492, 1),
    (2, 3, 0.04699, 0.19797, 0.0438, 1), (2, 4, 0.05811, 0.17632, 0.034, 1),
    (2, 5, 0.05695, 0.17388, 0.0346, 1), (3, 4, 0.06701, 0.17103, 0.0128, 1),
    (4, 5, 0.01335, 0.04211, 0, 1), (4, 7, 0, 0.20912, 0, 0.978), (4, 9, 0, 0.55618, 0, 0.969),
    (5, 6, 0, 0.25202, 0, 0.932), (6, 11, 0.09498, 0.1989, 0, 1), (6, 12, 0.12291, 0.25581, 0, 1),
    (6, 13, 0.06615, 0.13027, 0, 1), (7, 8, 0, 0.17615, 0, 1), (7, 9, 0, 0.11001, 0, 1),
    (9, 10, 0.03181, 0.0845, 0, 1), (9, 14, 0.12711, 0.27038, 0, 1), (10, 11, 0.08205, 0.19207, 0, 1),
    (12, 13, 0.22092, 0.19988, 0, 1), (13, 14, 0.17093, 0.34802, 0, 1),
]

UFLS_SEGMENT = {"fraction": 0.17, "scheme": "UFLS", "threshold": -0.3, "beta": 1000.0, "mode": "DISCRETE"}


def bus(i, area=1, bs=0.0):
    return {"id": i, "area": area, "v_min": 0.94, "v_max": 1.06, "gs": 0.0, "bs": float(bs)}


def branch(i, f, t, r, x, b=0.0, tap=1.0, rating=None):
    return {"id": i, "from": f, "to": t, "r": r, "x": x, "b": b, "tap": tap, "rating_mva": rating}


def gen(i, b, p, v, pmax, droop, slack=False, pmin=0.0, lo=0.9, hi=1.12):
    return {"id": i, "bus": b, "p_set_mw": p, "v_set_pu": v, "p_min_mw": pmin, "p_max_mw": pmax,
            "droop_mw_per_hz": droop, "slack": slack, "v_trip_lo": lo, "v_trip_hi": hi}


def load(i, b, p, q, segments=()):
    return {"id": i, "bus": b, "p_mw": p, "q_mvar": q, "segments": list(segments)}


def two_bus() -> dict:
    return {"name": "two_bus", "base_mva": 100.0, "f_nominal_hz": 60.0,
            "buses": [bus(1), bus(2)],
            "branches": [branch(1, 1, 2, 0.01, 0.1)],
            "generators": [gen(1, 1, 50.0, 1.0, 100.0, 10.0, slack=True)],
            "loads": [load(1, 2, 50.0, 10.0)]}


def parallel3() -> dict:
    """Two lossless parallel lines feed a 100 MW load; a third line feeds a
    20 MW load. One line alone carries sin(theta)/X with
    theta = asin(2 P X) / 2, i.e. 100.504 MVA, 140% of the 71.8 MVA rating."""
    return {"name": "parallel3", "base_mva": 100.0, "f_nominal_hz": 60.0,
            "buses": [bus(1), bus(2), bus(3)],
            "branches": [branch(1, 1, 2, 0.0, 0.1, rating=71.8), branch(2, 1, 2, 0.0, 0.1, rating=71.8),
                         branch(3, 1, 3, 0.0, 0.1, rating=50.0)],
            "generators": [gen(1, 1, 120.0, 1.0, 200.0, 100.0, slack=True)],
            "loads": [load(1, 2, 100.0, 0.0), load(2, 3, 20.0, 0.0)]}


def ieee14_base() -> dict:
    loads = [b for b in IEEE14_BUSES if b[1] or b[2]]
    return {"name": "ieee14", "base_mva": 100.0, "f_nominal_hz": 60.0,
            "buses": [bus(b[0], bs=b[3]) for b in IEEE14_BUSES],
            "branches": [branch(k + 1, *row) for k, row in enumerate(IEEE14_BRANCHES)],
            "generators": [gen(k + 1, *g) for k, g in enumerate(IEEE14_GENS)],
            "loads": [load(k + 1, b[0], float(b[1]), float(b[2])) for k, b in enumerate(loads)]}


def rate_branches(doc: dict, margin, floor: float) -> dict:
    """Set every rating to ``margin(id)`` times its base-case flow, rounded up
    to 5 MVA and at least ``floor``."""
    from cascadeflow.network import parse_case, find_islands
    from cascadeflow.stage1 import branch_flows, solve_island

    net = parse_case(doc)
    island = find_islands(net)[0]
    sol = solve_island(net, island)
    flows = branch_flows(net, island, sol.result.state)
    for br in doc["branches"]:
        s = max(abs(c) for c in flows[br["id"]]) * net.base_mva
        br["rating_mva"] = max(floor, 5.0 * math.ceil(margin(br["id"]) * s / 5.0))
    return doc


def ieee14() -> dict:
    return rate_branches(ieee14_base(), margin=lambda bid: 1.5, floor=20.0)


def ieee14_ufls() -> dict:
    doc = ieee14()
    doc["name"] = "ieee14_ufls"
    for ld in doc["loads"]:
        ld["segments"] = [dict(UFLS_SEGMENT)]
    return doc


CASCADE30_TIES = [(5, 12), (8, 15), (3, 22), (9, 27), (18, 25)]


def cascade30_base(area3_load_scale: float = 1.0, headroom: float = 1.0, droop_scale: float = 1.0) -> dict:
    """Three 10-bus areas, each a ring with two chords, joined by five ties.

    Area 1 holds most of the generation and runs its units near must-run
    minimums; area 3 imports most of its demand.
    """
    buses, branches, loads = [], [], []
    for area in (1, 2, 3):
        base = 10 * (area - 1)
        buses += [bus(base + k, area=area) for k in range(1, 11)]
        ring = [(base + k, base + k % 10 + 1) for k in range(1, 11)] + [(base + 1, base + 6), (base + 3, base + 8)]
        branches += [branch(len(branches) + i + 1, f, t, 0.01, 0.06, 0.02) for i, (f, t) in enumerate(ring)]
    branches += [branch(len(branches) + i + 1, f, t, 0.02, 0.12, 0.03) for i, (f, t) in enumerate(CASCADE30_TIES)]
    units = [  # id, bus, P, V, Pmax, droop, slack, Pmin
        (1, 1, 300.0, 1.04, 400.0, 20.0, True, 250.0), (2, 6, 200.0, 1.03, 250.0, 10.0, False, 150.0),
        (3, 11, 100.0, 1.03, 130.0, 10.0, False, 40.0), (4, 16, 50.0, 1.02, 70.0, 5.0, False, 0.0),
        (5, 21, 20.0, 1.02, 40.0, 5.0, False, 0.0),
    ]
    gens = [gen(i, b, p, v, headroom * pmax, droop_scale * d, slack=s, pmin=pmin)
            for i, b, p, v, pmax, d, s, pmin in units]
    demand = {1: 20.0, 2: 25.0, 3: 22.0 * area3_load_scale}
    for b in buses:
        p = demand[b["area"]]
        loads.append(load(len(loads) + 1, b["id"], p, 0.3 * p))
    return {"name": "cascade30", "base_mva": 100.0, "f_nominal_hz": 60.0,
            "buses": buses, "branches": branches, "generators": gens, "loads": loads}


def cascade30() -> dict:
    """Ties rated 120% and area-internal lines 200% of base flow (30 MVA floor)."""
    doc = cascade30_base()
    n_ties = len(CASCADE30_TIES)
    n_branches = len(doc["branches"])
    ties = {br["id"] for br in doc["branches"][n_branches - n_ties:]}
    rate_branches(doc, margin=lambda bid: 1.2 if bid in ties else 2.0, floor=30.0)
    return doc


def stressed30() -> dict:
    """Area-3 demand six times its cascade30 value with ample generation
    elsewhere: the import path, not total capacity, is what runs out."""
    doc = cascade30_base(area3_load_scale=6.0, headroom=5.0, droop_scale=10.0)
    doc["name"] = "stressed30"
    return doc


FIXTURES = {"two_bus": two_bus, "parallel3": parallel3, "ieee14": ieee14, "ieee14_ufls": ieee14_ufls,
            "cascade30": cascade30, "stressed30": stressed30}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*", default=sorted(FIXTURES), help="fixtures to rebuild")
    ap.add_argument("--out", type=Path, default=CASES)
    args = ap.parse_args(argv)
    for name in args.names:
        path = args.out / f"{name}.json"
        path.write_text(json.dumps(FIXTURES[name](), indent=1) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()

"""Trip-and-resolve cascade loop.

Every stage solves each island of the current network, classifies it and
checks protective limits on the secure-looking ones. All violators found in a
stage are tripped together before the next stage; the loop stops once a stage
finds nothing new to trip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .network import BRANCH, GEN, ContingencyEvent, Island, Network, apply_event, deactivate, find_islands
from .stage1 import Feasibility, SolverOptions, branch_flows, shed_mw, solve_island


class ViolationKind(str, Enum):
    BRANCH_OVERLOAD = "BRANCH_OVERLOAD"
    GEN_VOLTAGE = "GEN_VOLTAGE"


class IslandStatus(str, Enum):
    SECURE = "SECURE"
    VIOLATED = "VIOLATED"
    COLLAPSED = "COLLAPSED"
    BLACKED_OUT = "BLACKED_OUT"
    UNRESOLVED = "UNRESOLVED"


class Outcome(str, Enum):
    SECURE = "SECURE"
    PARTIAL_COLLAPSE = "PARTIAL_COLLAPSE"
    SYSTEM_BLACKOUT = "SYSTEM_BLACKOUT"
    UNRESOLVED = "UNRESOLVED"
    TRUNCATED = "TRUNCATED"


_DOWN = (IslandStatus.COLLAPSED, IslandStatus.BLACKED_OUT)


@dataclass(frozen=True)
class Violation:
    device: tuple[str, int]
    kind: ViolationKind
    observed: float  # MVA for branches, p.u. voltage for generators
    limit: float

    def to_dict(self) -> dict:
        return {"device": f"{self.device[0]}:{self.device[1]}", "kind": self.kind.value,
                "observed": self.observed, "limit": self.limit}


@dataclass(frozen=True)
class CascadeParams:
    relay_deadband: float = 0.0
    max_stages: int = 50
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.relay_deadband < 0:
            raise ValueError("relay_deadband must be non-negative")
        if self.max_stages < 1:
            raise ValueError("max_stages must be at least 1")


@dataclass(frozen=True)
class IslandRecord:
    id: int
    buses: tuple[int, ...]
    status: IslandStatus
    delta_f_hz: float | None
    shed_mw: float
    load_mw: float
    worst_if_bus: int | None
    max_if_pu: float
    if_by_bus: dict[int, float]
    iterations: int = 0
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "buses": list(self.buses),
            "status": self.status.value,
            "delta_f_hz": self.delta_f_hz,
            "shed_mw": self.shed_mw,
            "load_mw": self.load_mw,
            "worst_if_bus": self.worst_if_bus,
            "max_if_pu": self.max_if_pu,
            "if_by_bus": {str(b): v for b, v in self.if_by_bus.items()},
            "iterations": self.iterations,
            "message": self.message,
        }


@dataclass(frozen=True)
class CascadeStageRecord:
    index: int
    trips: tuple[tuple[str, int], ...]
    islands: tuple[IslandRecord, ...]
    violations: tuple[Violation, ...]

    def to_dict(self) -> dict:
        return {
            "stage": self.index,
            "trips": [f"trip:{k}:{i}" for k, i in self.trips],
            "islands": [isl.to_dict() for isl in self.islands],
            "violations": [v.to_dict() for v in self.violations],
        }


@dataclass(frozen=True)
class CascadeReport:
    event: str
    stages: tuple[CascadeStageRecord, ...]
    outcome: Outcome
    final_network: Network | None = field(default=None, compare=False, repr=False)
    error: str = ""

    @property
    def final_stage(self) -> CascadeStageRecord:
        return self.stages[-1]

    @property
    def tripped(self) -> tuple[tuple[str, int], ...]:
        return tuple(d for s in self.stages for d in s.trips)

    def to_dict(self) -> dict:
        out = {"event": self.event, "stages": [s.to_dict() for s in self.stages], "outcome": self.outcome.value}
        if self.error:
            out["error"] = self.error
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


# ---------------------------------------------------------------------------


def check_limits(net: Network, island: Island, result, relay_deadband: float = 0.0) -> list[Violation]:
    """Branch overloads and generator voltage trips at a converged state."""
    out = []
    flows = branch_flows(net, island, result.state)
    for bid in sorted(flows):
        rating = net.branch_by_id[bid].rating
        if rating is None:
            continue
        s_from, s_to = flows[bid]
        observed = max(abs(s_from), abs(s_to))
        if observed > rating * (1.0 + relay_deadband):
            out.append(Violation((BRANCH, bid), ViolationKind.BRANCH_OVERLOAD,
                                 observed * net.base_mva, rating * net.base_mva))
    volts = result.state.voltages()
    for gid in sorted(island.generators):
        gen = net.gen_by_id[gid]
        vm = abs(volts[gen.bus])
        if vm < gen.v_trip_lo:
            out.append(Violation((GEN, gid), ViolationKind.GEN_VOLTAGE, vm, gen.v_trip_lo))
        elif vm > gen.v_trip_hi:
            out.append(Violation((GEN, gid), ViolationKind.GEN_VOLTAGE, vm, gen.v_trip_hi))
    return out


def _island_key(island: Island) -> tuple:
    return (island.buses, island.branches, island.generators, island.loads)


def _island_load_mw(net: Network, island: Island) -> float:
    return sum(net.load_by_id[lid].p_set for lid in island.loads) * net.base_mva


def _warm_values(state) -> dict:
    """Named values of a solved island, with the frequency carried per bus so
    any island later containing one of these buses can pick it up."""
    warm = {k: v for k, v in state.named().items() if k != ("df",)}
    df = state[("df",)]
    for b in state.layout.buses:
        warm[("df_bus", b)] = df
    return warm


def _solve_one(net: Network, island: Island, params: CascadeParams, warm: dict):
    """Classify one island; returns (record without id, violations, warm values)."""
    load_mw = _island_load_mw(net, island)
    if island.reference_gen is None:
        rec = IslandRecord(island.id, island.buses, IslandStatus.BLACKED_OUT, None, 0.0, load_mw,
                           None, 0.0, {}, message="no active generator")
        return rec, [], {}
    sol = solve_island(net, island, params.solver, warm=warm)
    res = sol.result
    if not res.converged:
        rec = IslandRecord(island.id, island.buses, IslandStatus.UNRESOLVED, None, 0.0, load_mw,
                           None, 0.0, {}, res.iterations, res.message)
        return rec, [], {}
    if_by_bus = dict(sorted(res.if_mag.items()))
    violations: list[Violation] = []
    if res.feasibility is Feasibility.INFEASIBLE:
        status = IslandStatus.COLLAPSED
    else:
        violations = check_limits(net, island, res, params.relay_deadband)
        status = IslandStatus.VIOLATED if violations else IslandStatus.SECURE
    rec = IslandRecord(island.id, island.buses, status, res.delta_f, shed_mw(sol.problem, res), load_mw,
                       res.worst_if_bus, res.max_if, if_by_bus, res.iterations, res.message)
    return rec, violations, _warm_values(res.state)


def _outcome(islands: tuple[IslandRecord, ...]) -> Outcome:
    statuses = [isl.status for isl in islands]
    if any(s is IslandStatus.UNRESOLVED for s in statuses):
        return Outcome.UNRESOLVED
    if all(s is IslandStatus.SECURE for s in statuses):
        return Outcome.SECURE
    if all(s in _DOWN for s in statuses):
        return Outcome.SYSTEM_BLACKOUT
    return Outcome.PARTIAL_COLLAPSE


def run_cascade(net: Network, event: ContingencyEvent | None, params: CascadeParams | None = None) -> CascadeReport:
    """Apply ``event`` and iterate solve, check and trip until nothing new trips.

    ``event=None`` runs the loop on ``net`` as given. An island whose devices
    did not change since the previous stage is not solved again.
    """
    params = params or CascadeParams()
    current = net
    trips: tuple[tuple[str, int], ...] = ()
    if event is not None:
        current = apply_event(net, event)
        trips = (event.device,)
    label = event.spec if event is not None else "none"

    warm: dict = {}
    cache: dict[tuple, tuple] = {}
    stages = []
    for index in range(1, params.max_stages + 1):
        islands = find_islands(current)
        records, found, new_cache = [], [], {}
        for island in islands:
            key = _island_key(island)
            if key in cache:
                rec, viol, values = cache[key]
            else:
                rec, viol, values = _solve_one(current, island, params, warm)
            new_cache[key] = (rec, viol, values)
            records.append(IslandRecord(**{**rec.__dict__, "id": island.id}))
            found.extend(viol)
            warm.update(values)
        cache = new_cache
        found.sort(key=lambda v: (v.device, v.kind.value))
        stage = CascadeStageRecord(index, trips, tuple(records), tuple(found))
        stages.append(stage)
        if not found:
            return CascadeReport(label, tuple(stages), _outcome(stage.islands), current)
        trips = tuple(sorted({v.device for v in found}))
        current = deactivate(current, trips)
    return CascadeReport(label, tuple(stages), Outcome.TRUNCATED, current)

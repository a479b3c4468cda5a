"""Network data model, JSON case ingestion and topology helpers.

Case documents carry physical units (MW, MVAr, MVA, MW/Hz). Branch
impedances and line charging are per-unit on ``base_mva`` already, as is
usual for transmission data without voltage bases. Everything held by
:class:`Network` is per-unit except frequency quantities, which stay in Hz.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable

import jsonschema
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .curves import DEFAULT_DISCRETE_BETA


class Scheme(str, Enum):
    UFLS = "UFLS"
    UVLS = "UVLS"


class ShedMode(str, Enum):
    DISCRETE = "DISCRETE"
    CONTINUOUS = "CONTINUOUS"


class EventKind(str, Enum):
    BRANCH_TRIP = "BRANCH_TRIP"
    GENERATOR_TRIP = "GENERATOR_TRIP"
    LOAD_TRIP = "LOAD_TRIP"


# device-kind tags used in the activity mask and in reports
BRANCH, GEN, LOAD = "branch", "gen", "load"
_EVENT_DEVICE = {EventKind.BRANCH_TRIP: BRANCH, EventKind.GENERATOR_TRIP: GEN, EventKind.LOAD_TRIP: LOAD}


class CaseFormatError(ValueError):
    """Raised for malformed case documents; ``path`` locates the field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class EventWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    area: int = 1
    v_min: float = 0.9
    v_max: float = 1.1
    shunt_g: float = 0.0
    shunt_b: float = 0.0


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_sh: float = 0.0
    tap: float = 1.0
    rating: float | None = None  # per-unit apparent power


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p_set: float
    v_set: float
    p_min: float
    p_max: float
    droop_gain: float = 0.0  # per-unit power per Hz
    is_slack: bool = False
    v_trip_lo: float | None = None
    v_trip_hi: float | None = None


@dataclass(frozen=True)
class ShedSegment:
    fraction: float
    scheme: Scheme
    threshold: float  # Hz deviation for UFLS, p.u. voltage for UVLS
    beta: float
    mode: ShedMode = ShedMode.DISCRETE


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    p_set: float
    q_set: float
    segments: tuple[ShedSegment, ...] = ()

    @property
    def fixed_fraction(self) -> float:
        """Share of the load no scheme can shed."""
        return 1.0 - sum(s.fraction for s in self.segments)


@dataclass(frozen=True)
class ContingencyEvent:
    kind: EventKind
    target: int

    @property
    def device(self) -> tuple[str, int]:
        return (_EVENT_DEVICE[self.kind], self.target)

    @property
    def spec(self) -> str:
        return f"trip:{_EVENT_DEVICE[self.kind]}:{self.target}"

    @classmethod
    def parse(cls, text: str) -> "ContingencyEvent":
        """Parse ``trip:branch:<id>``, ``trip:gen:<id>`` or ``trip:load:<id>``."""
        parts = text.strip().split(":")
        kinds = {v: k for k, v in _EVENT_DEVICE.items()}
        if len(parts) != 3 or parts[0] != "trip" or parts[1] not in kinds:
            raise ValueError(f"bad event spec {text!r}; expected trip:<branch|gen|load>:<id>")
        try:
            target = int(parts[2])
        except ValueError:
            raise ValueError(f"bad device id in event spec {text!r}") from None
        return cls(kinds[parts[1]], target)


@dataclass(frozen=True)
class Island:
    id: int
    buses: tuple[int, ...]
    branches: tuple[int, ...]
    generators: tuple[int, ...]
    loads: tuple[int, ...]
    reference_gen: int | None


@dataclass(frozen=True)
class Network:
    base_mva: float
    f_nominal: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    # activity mask, stored as the set of (kind, id) keys that are out of service
    inactive: frozenset = field(default_factory=frozenset)
    name: str = ""

    @cached_property
    def bus_by_id(self) -> dict[int, Bus]:
        return {b.id: b for b in self.buses}

    @cached_property
    def branch_by_id(self) -> dict[int, Branch]:
        return {b.id: b for b in self.branches}

    @cached_property
    def gen_by_id(self) -> dict[int, Generator]:
        return {g.id: g for g in self.generators}

    @cached_property
    def load_by_id(self) -> dict[int, Load]:
        return {ld.id: ld for ld in self.loads}

    def is_active(self, kind: str, device_id: int) -> bool:
        return (kind, device_id) not in self.inactive

    @property
    def active(self) -> dict[tuple[str, int], bool]:
        """Per-device activity mask."""
        mask = {(BRANCH, b.id): True for b in self.branches}
        mask.update({(GEN, g.id): True for g in self.generators})
        mask.update({(LOAD, ld.id): True for ld in self.loads})
        for key in self.inactive:
            mask[key] = False
        return mask

    def active_branches(self) -> list[Branch]:
        return [b for b in self.branches if (BRANCH, b.id) not in self.inactive]

    def active_generators(self) -> list[Generator]:
        return [g for g in self.generators if (GEN, g.id) not in self.inactive]

    def active_loads(self) -> list[Load]:
        return [ld for ld in self.loads if (LOAD, ld.id) not in self.inactive]

    def has_device(self, kind: str, device_id: int) -> bool:
        table = {BRANCH: self.branch_by_id, GEN: self.gen_by_id, LOAD: self.load_by_id}[kind]
        return device_id in table


# ---------------------------------------------------------------------------
# JSON case schema
# ---------------------------------------------------------------------------

_NUM = {"type": "number"}
_OPT_NUM = {"type": ["number", "null"]}
_INT = {"type": "integer"}

CASE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["base_mva", "f_nominal_hz", "buses", "branches", "generators", "loads"],
    "properties": {
        "base_mva": _NUM,
        "f_nominal_hz": _NUM,
        "name": {"type": "string"},
        "buses": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id"],
                "properties": {"id": _INT, "area": _INT, "v_min": _NUM, "v_max": _NUM, "gs": _NUM, "bs": _NUM},
            },
        },
        "branches": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "from", "to", "r", "x"],
                "properties": {
                    "id": _INT, "from": _INT, "to": _INT, "r": _NUM, "x": _NUM,
                    "b": _NUM, "tap": _NUM, "rating_mva": _OPT_NUM,
                },
            },
        },
        "generators": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "bus", "p_set_mw", "v_set_pu", "p_min_mw", "p_max_mw"],
                "properties": {
                    "id": _INT, "bus": _INT, "p_set_mw": _NUM, "v_set_pu": _NUM,
                    "p_min_mw": _NUM, "p_max_mw": _NUM, "droop_mw_per_hz": _NUM,
                    "slack": {"type": "boolean"}, "v_trip_lo": _OPT_NUM, "v_trip_hi": _OPT_NUM,
                },
            },
        },
        "loads": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "bus", "p_mw", "q_mvar"],
                "properties": {
                    "id": _INT, "bus": _INT, "p_mw": _NUM, "q_mvar": _NUM,
                    "segments": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["fraction", "scheme", "threshold"],
                            "properties": {
                                "fraction": _NUM,
                                "scheme": {"enum": ["UFLS", "UVLS"]},
                                "threshold": _NUM,
                                "beta": _OPT_NUM,
                                "mode": {"enum": ["DISCRETE", "CONTINUOUS"]},
                            },
                        },
                    },
                },
            },
        },
    },
}


def _json_path(parts: Iterable) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def parse_case(text: str | bytes | dict) -> Network:
    """Build a per-unit :class:`Network` from a JSON case document.

    Raises :class:`CaseFormatError` on schema violations, duplicate ids and
    dangling bus references.
    """
    doc = text if isinstance(text, dict) else json.loads(text)
    validator = jsonschema.Draft202012Validator(CASE_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise CaseFormatError(_json_path(err.absolute_path), err.message)

    base = float(doc["base_mva"])
    if base <= 0:
        raise CaseFormatError("base_mva", "must be positive")
    if doc["f_nominal_hz"] <= 0:
        raise CaseFormatError("f_nominal_hz", "must be positive")

    for section in ("buses", "branches", "generators", "loads"):
        seen = set()
        for i, item in enumerate(doc[section]):
            if item["id"] in seen:
                raise CaseFormatError(f"{section}[{i}].id", f"duplicate id {item['id']}")
            seen.add(item["id"])

    bus_ids = {b["id"] for b in doc["buses"]}

    def check_bus(path: str, ref: int):
        if ref not in bus_ids:
            raise CaseFormatError(path, f"references unknown bus {ref}")

    buses = tuple(
        Bus(
            id=b["id"],
            area=b.get("area", 1),
            v_min=float(b.get("v_min", 0.9)),
            v_max=float(b.get("v_max", 1.1)),
            shunt_g=b.get("gs", 0.0) / base,
            shunt_b=b.get("bs", 0.0) / base,
        )
        for b in doc["buses"]
    )

    branches = []
    for i, br in enumerate(doc["branches"]):
        check_bus(f"branches[{i}].from", br["from"])
        check_bus(f"branches[{i}].to", br["to"])
        rating = br.get("rating_mva")
        branches.append(
            Branch(
                id=br["id"], from_bus=br["from"], to_bus=br["to"],
                r=float(br["r"]), x=float(br["x"]), b_sh=float(br.get("b", 0.0)),
                tap=float(br.get("tap", 1.0)),
                rating=None if rating is None else rating / base,
            )
        )

    gens = []
    for i, g in enumerate(doc["generators"]):
        check_bus(f"generators[{i}].bus", g["bus"])
        gens.append(
            Generator(
                id=g["id"], bus=g["bus"],
                p_set=g["p_set_mw"] / base, v_set=float(g["v_set_pu"]),
                p_min=g["p_min_mw"] / base, p_max=g["p_max_mw"] / base,
                droop_gain=g.get("droop_mw_per_hz", 0.0) / base,
                is_slack=bool(g.get("slack", False)),
                v_trip_lo=g.get("v_trip_lo"), v_trip_hi=g.get("v_trip_hi"),
            )
        )

    loads = []
    for i, ld in enumerate(doc["loads"]):
        check_bus(f"loads[{i}].bus", ld["bus"])
        segs = []
        for s in ld.get("segments", []):
            mode = ShedMode(s.get("mode", "DISCRETE"))
            beta = s.get("beta")
            if beta is None:
                if mode is ShedMode.CONTINUOUS:
                    raise CaseFormatError(f"loads[{i}].segments", "CONTINUOUS segments need beta (the K factor)")
                beta = DEFAULT_DISCRETE_BETA
            segs.append(ShedSegment(float(s["fraction"]), Scheme(s["scheme"]), float(s["threshold"]), float(beta), mode))
        loads.append(Load(ld["id"], ld["bus"], ld["p_mw"] / base, ld["q_mvar"] / base, tuple(segs)))

    return Network(
        base_mva=base,
        f_nominal=float(doc["f_nominal_hz"]),
        buses=buses,
        branches=tuple(branches),
        generators=tuple(gens),
        loads=tuple(loads),
        name=str(doc.get("name", "")),
    )


def load_case(path: str | Path) -> Network:
    return parse_case(Path(path).read_text())


def to_document(net: Network) -> dict:
    """Inverse of :func:`parse_case` (activity mask is not serialised)."""
    base = net.base_mva
    head = {"name": net.name} if net.name else {}
    return head | {
        "base_mva": base,
        "f_nominal_hz": net.f_nominal,
        "buses": [
            {"id": b.id, "area": b.area, "v_min": b.v_min, "v_max": b.v_max, "gs": b.shunt_g * base, "bs": b.shunt_b * base}
            for b in net.buses
        ],
        "branches": [
            {
                "id": b.id, "from": b.from_bus, "to": b.to_bus, "r": b.r, "x": b.x, "b": b.b_sh, "tap": b.tap,
                "rating_mva": None if b.rating is None else b.rating * base,
            }
            for b in net.branches
        ],
        "generators": [
            {
                "id": g.id, "bus": g.bus, "p_set_mw": g.p_set * base, "v_set_pu": g.v_set,
                "p_min_mw": g.p_min * base, "p_max_mw": g.p_max * base,
                "droop_mw_per_hz": g.droop_gain * base, "slack": g.is_slack,
                "v_trip_lo": g.v_trip_lo, "v_trip_hi": g.v_trip_hi,
            }
            for g in net.generators
        ],
        "loads": [
            {
                "id": ld.id, "bus": ld.bus, "p_mw": ld.p_set * base, "q_mvar": ld.q_set * base,
                "segments": [
                    {"fraction": s.fraction, "scheme": s.scheme.value, "threshold": s.threshold, "beta": s.beta, "mode": s.mode.value}
                    for s in ld.segments
                ],
            }
            for ld in net.loads
        ],
    }


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Issue:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


def validate(net: Network) -> list[Issue]:
    """Return every violated invariant; an empty list means solvable in principle."""
    issues: list[Issue] = []
    add = lambda path, msg: issues.append(Issue(path, msg))  # noqa: E731

    if net.base_mva <= 0:
        add("base_mva", "must be positive")
    if net.f_nominal <= 0:
        add("f_nominal_hz", "must be positive")

    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        add("buses", "duplicate bus ids")
    for i, b in enumerate(net.buses):
        if not 0 < b.v_min < b.v_max:
            add(f"buses[{i}]", f"bus {b.id}: need 0 < v_min < v_max")

    known = set(ids)
    for i, br in enumerate(net.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                add(f"branches[{i}]", f"branch {br.id} references unknown bus {end}")
        if br.r * br.r + br.x * br.x <= 0:
            add(f"branches[{i}]", f"branch {br.id}: zero series impedance")
        if br.tap <= 0:
            add(f"branches[{i}]", f"branch {br.id}: non-positive tap")
        if br.rating is not None and br.rating <= 0:
            add(f"branches[{i}]", f"branch {br.id}: non-positive rating")

    slacks = [g for g in net.generators if g.is_slack]
    if not slacks:
        add("generators", "no angle reference (no slack generator)")
    elif len(slacks) > 1:
        add("generators", f"{len(slacks)} slack generators flagged, expected exactly one")

    for i, g in enumerate(net.generators):
        if g.bus not in known:
            add(f"generators[{i}]", f"generator {g.id} references unknown bus {g.bus}")
        if not g.p_min <= g.p_set <= g.p_max:
            add(f"generators[{i}]", f"generator {g.id}: need p_min <= p_set <= p_max")
        if g.droop_gain < 0:
            add(f"generators[{i}]", f"generator {g.id}: negative droop gain")
        if g.droop_gain > 0 and not g.p_min < g.p_set < g.p_max:
            add(f"generators[{i}]", f"generator {g.id}: droop response needs p_set strictly inside limits")
        lo = g.v_trip_lo if g.v_trip_lo is not None else float("-inf")
        hi = g.v_trip_hi if g.v_trip_hi is not None else float("inf")
        if not lo < g.v_set < hi:
            add(f"generators[{i}]", f"generator {g.id}: need v_trip_lo < v_set < v_trip_hi")

    for i, ld in enumerate(net.loads):
        if ld.bus not in known:
            add(f"loads[{i}]", f"load {ld.id} references unknown bus {ld.bus}")
        total = sum(s.fraction for s in ld.segments)
        if total > 1.0 + 1e-12:
            add(f"loads[{i}]", f"load {ld.id}: segment fractions sum to {total:g} > 1 (not a partition)")
        for k, s in enumerate(ld.segments):
            path = f"loads[{i}].segments[{k}]"
            if not 0 < s.fraction <= 1:
                add(path, "fraction must lie in (0, 1]")
            if s.beta <= 0:
                add(path, "beta must be positive")
            if s.mode is ShedMode.DISCRETE and s.beta < 100:
                add(path, "DISCRETE segments need beta >= 100")
    return issues


# ---------------------------------------------------------------------------
# derived networks
# ---------------------------------------------------------------------------


def scale_loading(net: Network, lf: float) -> Network:
    """Scale load P, Q and generator P (with its limits) by ``lf``."""
    if not lf > 0:
        raise ValueError(f"loading factor must be positive, got {lf}")
    gens = tuple(replace(g, p_set=g.p_set * lf, p_min=g.p_min * lf, p_max=g.p_max * lf) for g in net.generators)
    loads = tuple(replace(ld, p_set=ld.p_set * lf, q_set=ld.q_set * lf) for ld in net.loads)
    return replace(net, generators=gens, loads=loads)


def apply_event(net: Network, ev: ContingencyEvent) -> Network:
    kind, target = ev.device
    if not net.has_device(kind, target):
        raise KeyError(f"{ev.spec}: no such device")
    if (kind, target) in net.inactive:
        warnings.warn(f"{ev.spec}: device already out of service", EventWarning, stacklevel=2)
        return net
    return replace(net, inactive=net.inactive | {(kind, target)})


def deactivate(net: Network, devices: Iterable[tuple[str, int]]) -> Network:
    keys = frozenset(devices)
    if keys <= net.inactive:
        return net
    return replace(net, inactive=net.inactive | keys)


def with_segments(net: Network, segments: Iterable[ShedSegment], load_ids: Iterable[int] | None = None) -> Network:
    """Return a copy whose loads (all, or ``load_ids``) carry ``segments``."""
    segments = tuple(segments)
    chosen = None if load_ids is None else set(load_ids)
    loads = tuple(
        replace(ld, segments=segments) if chosen is None or ld.id in chosen else ld for ld in net.loads
    )
    return replace(net, loads=loads)


def find_islands(net: Network) -> list[Island]:
    """Connected components over all buses and active branches.

    Islands are numbered by their smallest bus id. The reference generator
    is the global slack when present, else the active generator with the
    largest ``p_max`` (ties to the lowest id).
    """
    ids = [b.id for b in net.buses]
    pos = {b: i for i, b in enumerate(ids)}
    branches = net.active_branches()
    rows = [pos[b.from_bus] for b in branches]
    cols = [pos[b.to_bus] for b in branches]
    adj = coo_matrix(([1] * len(rows), (rows, cols)), shape=(len(ids), len(ids)))
    _, labels = connected_components(adj, directed=False)

    groups: dict[int, list[int]] = {}
    for bus_id, lab in zip(ids, labels):
        groups.setdefault(int(lab), []).append(bus_id)
    members = sorted((tuple(sorted(v)) for v in groups.values()), key=lambda t: t[0])

    islands = []
    for k, buses in enumerate(members):
        inside = set(buses)
        br = tuple(sorted(b.id for b in branches if b.from_bus in inside))
        gens = [g for g in net.active_generators() if g.bus in inside]
        lds = tuple(sorted(ld.id for ld in net.active_loads() if ld.bus in inside))
        ref = None
        if gens:
            slack = [g for g in gens if g.is_slack]
            ref = slack[0].id if slack else min(gens, key=lambda g: (-g.p_max, g.id)).id
        islands.append(Island(k, buses, br, tuple(sorted(g.id for g in gens)), lds, ref))
    return islands

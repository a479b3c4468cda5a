"""Contingency sets, area aggregation and report files."""

from __future__ import annotations

import csv
import logging
import math
import re
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .cascade import CascadeParams, CascadeReport, CascadeStageRecord, IslandStatus, Outcome, run_cascade
from .network import ContingencyEvent, Network
from .stage1 import SolverOptions

log = logging.getLogger(__name__)


class ReportError(OSError):
    def __init__(self, path: Path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class RunConfig:
    case: Path
    events: tuple[str, ...]
    loading_factor: float = 1.0
    parallelism: int = 1
    out_dir: Path = Path("reports")
    beta: float | None = None
    feas_tol: float | None = None
    max_stages: int | None = None
    relay_deadband: float = 0.0

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")
        if not self.loading_factor > 0:
            raise ValueError("loading factor must be positive")

    def contingencies(self) -> list[ContingencyEvent]:
        return [ContingencyEvent.parse(e) for e in self.events]

    def params(self) -> CascadeParams:
        solver = SolverOptions()
        if self.beta is not None:
            solver = replace(solver, beta_override=self.beta)
        if self.feas_tol is not None:
            solver = replace(solver, feas_tol=self.feas_tol)
        kw = {"solver": solver, "relay_deadband": self.relay_deadband}
        if self.max_stages is not None:
            kw["max_stages"] = self.max_stages
        return CascadeParams(**kw)


@dataclass(frozen=True)
class AreaInfeasibility:
    area: int
    aggregate_if_pu: float
    bus_count: int


# ---------------------------------------------------------------------------
# contingency sets
# ---------------------------------------------------------------------------

_WORKER_NET: Network | None = None


def _init_worker(net: Network) -> None:
    global _WORKER_NET
    _WORKER_NET = net


def _run_event(net: Network, event: ContingencyEvent, params: CascadeParams) -> CascadeReport:
    try:
        report = run_cascade(net, event, params)
    except Exception as exc:  # isolate one bad event from the rest of the set
        log.debug("cascade for %s failed:\n%s", event.spec, traceback.format_exc())
        return CascadeReport(event.spec, (), Outcome.UNRESOLVED, None, error=f"{type(exc).__name__}: {exc}")
    # the terminal network stays in the worker; reports cross processes lean
    return replace(report, final_network=None)


def _worker(args) -> CascadeReport:
    event, params = args
    return _run_event(_WORKER_NET, event, params)


def run_contingency_set(net: Network, events, params: CascadeParams | None = None,
                        parallelism: int = 1) -> list[CascadeReport]:
    """One cascade per event, returned in input order."""
    events = list(events)
    if not events:
        raise ValueError("the contingency set is empty")
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    params = params or CascadeParams()
    if parallelism == 1 or len(events) == 1:
        return [_run_event(net, ev, params) for ev in events]
    workers = min(parallelism, len(events))
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(net,)) as pool:
        return list(pool.map(_worker, [(ev, params) for ev in events]))


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def aggregate_infeasibility_by_area(stage: CascadeStageRecord, net: Network) -> list[AreaInfeasibility]:
    """Sum the per-bus infeasibility magnitudes of a stage by bus area.

    Buses of islands without a solution contribute zero. Returns an empty list
    (with a warning) when the stage has no collapsed island.
    """
    if not any(isl.status is IslandStatus.COLLAPSED for isl in stage.islands):
        warnings.warn(f"stage {stage.index} has no collapsed island; nothing to aggregate", stacklevel=2)
        return []
    values: dict[int, list[float]] = {}
    for isl in stage.islands:
        for b in isl.buses:
            area = net.bus_by_id[b].area
            values.setdefault(area, []).append(isl.if_by_bus.get(b, 0.0))
    return [AreaInfeasibility(a, math.fsum(v), len(v)) for a, v in sorted(values.items())]


def write_area_csv(rows: list[AreaInfeasibility], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["area", "aggregate_if_pu", "bus_count"])
        for r in rows:
            w.writerow([r.area, repr(r.aggregate_if_pu), r.bus_count])


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

SUMMARY_FIELDS = ["event", "outcome", "stages", "total_shed_mw", "final_delta_f_hz"]


def report_stem(event: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", event).strip("_") or "event"


def summary_row(report: CascadeReport) -> dict:
    """Set-level summary; the frequency quoted is that of the largest final
    island (most buses, then lowest id) that has a solution."""
    if not report.stages:
        return {"event": report.event, "outcome": report.outcome.value, "stages": 0,
                "total_shed_mw": "", "final_delta_f_hz": ""}
    final = report.final_stage.islands
    shed = math.fsum(isl.shed_mw for isl in final)
    solved = [isl for isl in final if isl.delta_f_hz is not None]
    df = ""
    if solved:
        df = repr(min(solved, key=lambda isl: (-len(isl.buses), isl.id)).delta_f_hz)
    return {"event": report.event, "outcome": report.outcome.value, "stages": len(report.stages),
            "total_shed_mw": repr(shed), "final_delta_f_hz": df}


def emit_report(reports: list[CascadeReport], out_dir: Path, net: Network) -> list[Path]:
    """Write per-event JSON, ``summary.csv`` and ``<event>_areas.csv`` for
    cascades that end with a collapsed island. Returns the paths written."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise ReportError(out_dir, "output directory does not exist")
    written = []
    seen: dict[str, int] = {}
    try:
        rows = []
        for rep in reports:
            stem = report_stem(rep.event)
            seen[stem] = seen.get(stem, 0) + 1
            if seen[stem] > 1:
                stem = f"{stem}_{seen[stem]}"
            path = out_dir / f"{stem}.json"
            path.write_text(rep.to_json())
            written.append(path)
            rows.append(summary_row(rep))
            if rep.stages and any(i.status is IslandStatus.COLLAPSED for i in rep.final_stage.islands):
                area_path = out_dir / f"{stem}_areas.csv"
                write_area_csv(aggregate_infeasibility_by_area(rep.final_stage, net), area_path)
                written.append(area_path)
        summary = out_dir / "summary.csv"
        with open(summary, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        written.append(summary)
    except OSError as exc:
        raise ReportError(Path(getattr(exc, "filename", None) or out_dir), exc.strerror or str(exc)) from exc
    return written


EXIT_OK, EXIT_USAGE, EXIT_COLLAPSE, EXIT_UNRESOLVED = 0, 1, 2, 3


def exit_code(reports: list[CascadeReport]) -> int:
    outcomes = {r.outcome for r in reports}
    if outcomes & {Outcome.UNRESOLVED, Outcome.TRUNCATED}:
        return EXIT_UNRESOLVED
    if outcomes & {Outcome.PARTIAL_COLLAPSE, Outcome.SYSTEM_BLACKOUT}:
        return EXIT_COLLAPSE
    return EXIT_OK


__all__ = [
    "AreaInfeasibility", "ReportError", "RunConfig", "aggregate_infeasibility_by_area", "emit_report",
    "exit_code", "report_stem", "run_contingency_set", "summary_row", "write_area_csv",
]

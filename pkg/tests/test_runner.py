import csv
import json
import math
import warnings

import pytest

from cascadeflow import case_path, load_case
from cascadeflow.cascade import (CascadeParams, CascadeReport, CascadeStageRecord, IslandRecord, IslandStatus,
                                 Outcome, run_cascade)
from cascadeflow.network import ContingencyEvent, find_islands
from cascadeflow.runner import (ReportError, RunConfig, aggregate_infeasibility_by_area, emit_report, exit_code,
                                report_stem, run_contingency_set, summary_row)
from cascadeflow.stage1 import Feasibility, classify_feasibility, solve_island


def _events(*specs):
    return [ContingencyEvent.parse(s) for s in specs]


def _record(isl_id, buses, status, if_by_bus):
    return IslandRecord(isl_id, tuple(buses), status, 0.0, 0.0, 0.0,
                        max(if_by_bus, key=if_by_bus.get) if if_by_bus else None,
                        max(if_by_bus.values(), default=0.0), if_by_bus)


# -- contingency sets --------------------------------------------------------------


def test_single_event_matches_direct(parallel3):
    (rep,) = run_contingency_set(parallel3, _events("trip:branch:1"))
    direct = run_cascade(parallel3, _events("trip:branch:1")[0])
    assert rep.to_json() == direct.to_json()


def test_parallelism_is_byte_identical(cascade30, tmp_path):
    specs = [f"trip:branch:{b}" for b in (37, 38, 39, 40, 41, 1, 12, 25)] + ["trip:gen:4", "trip:load:3"]
    events = _events(*specs)
    serial = run_contingency_set(cascade30, events, parallelism=1)
    pooled = run_contingency_set(cascade30, events, parallelism=8)
    assert [r.event for r in pooled] == specs
    out1, out8 = tmp_path / "p1", tmp_path / "p8"
    out1.mkdir()
    out8.mkdir()
    emit_report(serial, out1, cascade30)
    emit_report(pooled, out8, cascade30)
    files = sorted(p.name for p in out1.iterdir())
    assert files == sorted(p.name for p in out8.iterdir())
    for name in files:
        assert (out1 / name).read_bytes() == (out8 / name).read_bytes()


def test_ieee14_n1_branch_screen(ieee14):
    reports = run_contingency_set(ieee14, _events(*[f"trip:branch:{b}" for b in range(1, 21)]))
    secure = sum(r.outcome is Outcome.SECURE for r in reports)
    assert secure > len(reports) / 2
    assert all(r.outcome is not Outcome.UNRESOLVED for r in reports)


def test_failing_event_is_isolated(ieee14):
    reports = run_contingency_set(ieee14, _events("trip:branch:20", "trip:branch:999", "trip:branch:19"))
    assert [r.outcome for r in reports] == [Outcome.SECURE, Outcome.UNRESOLVED, Outcome.SECURE]
    assert "KeyError" in reports[1].error and reports[1].stages == ()


def test_empty_set_rejected(ieee14):
    with pytest.raises(ValueError):
        run_contingency_set(ieee14, [])


def test_run_config():
    cfg = RunConfig(case_path("ieee14"), ("trip:branch:1",), beta=200.0, max_stages=3)
    params = cfg.params()
    assert params.solver.beta_override == 200.0 and params.max_stages == 3
    assert cfg.contingencies()[0].device == ("branch", 1)
    with pytest.raises(ValueError):
        RunConfig(case_path("ieee14"), (), parallelism=0)


# -- area aggregation --------------------------------------------------------------


def test_aggregation_all_zero_warns(cascade30):
    stage = CascadeStageRecord(1, (), (_record(0, [b.id for b in cascade30.buses], IslandStatus.SECURE, {}),), ())
    with pytest.warns(UserWarning):
        assert aggregate_infeasibility_by_area(stage, cascade30) == []


def test_aggregation_single_bus(cascade30):
    buses = [b.id for b in cascade30.buses]
    values = {b: 0.0 for b in buses}
    values[25] = 0.2
    stage = CascadeStageRecord(1, (), (_record(0, buses, IslandStatus.COLLAPSED, values),), ())
    rows = aggregate_infeasibility_by_area(stage, cascade30)
    assert [(r.area, r.aggregate_if_pu, r.bus_count) for r in rows] == [(1, 0.0, 10), (2, 0.0, 10), (3, 0.2, 10)]


def test_stressed_area_localization():
    net = load_case(case_path("stressed30"))
    island = find_islands(net)[0]
    sol = solve_island(net, island)
    feas, ranked = classify_feasibility(sol.result)
    assert feas is Feasibility.INFEASIBLE
    area = {b.id: b.area for b in net.buses}
    assert all(area[b] == 3 for b, _ in ranked[:5])

    rep = run_cascade(net, None)
    stage = rep.stages[0]
    rows = aggregate_infeasibility_by_area(stage, net)
    assert max(rows, key=lambda r: r.aggregate_if_pu).area == 3
    # exact reconciliation with the per-bus values
    (isl,) = stage.islands
    for r in rows:
        assert r.aggregate_if_pu == math.fsum(v for b, v in isl.if_by_bus.items() if area[b] == r.area)
    assert math.isclose(math.fsum(r.aggregate_if_pu for r in rows), math.fsum(isl.if_by_bus.values()),
                        rel_tol=1e-15, abs_tol=0.0)
    assert sum(r.bus_count for r in rows) == len(net.buses)


# -- report files ------------------------------------------------------------------


def test_emit_empty(tmp_path, ieee14):
    paths = emit_report([], tmp_path, ieee14)
    assert paths == [tmp_path / "summary.csv"]
    assert (tmp_path / "summary.csv").read_text() == "event,outcome,stages,total_shed_mw,final_delta_f_hz\n"


def test_emit_single_secure(tmp_path, ieee14):
    reports = run_contingency_set(ieee14, _events("trip:branch:20"))
    emit_report(reports, tmp_path, ieee14)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["summary.csv", "trip_branch_20.json"]
    doc = json.loads((tmp_path / "trip_branch_20.json").read_text())
    assert doc["outcome"] == "SECURE"
    (row,) = csv.DictReader(open(tmp_path / "summary.csv"))
    assert row["outcome"] == "SECURE" and row["stages"] == "1"


def test_emit_mixed(tmp_path, cascade30):
    reports = run_contingency_set(cascade30, _events("trip:branch:41", "trip:branch:39", "trip:branch:41"))
    emit_report(reports, tmp_path, cascade30)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["summary.csv", "trip_branch_39.json", "trip_branch_39_areas.csv",
                     "trip_branch_41.json", "trip_branch_41_2.json"]
    rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert [r["outcome"] for r in rows] == ["SECURE", "SYSTEM_BLACKOUT", "SECURE"]
    areas = list(csv.DictReader(open(tmp_path / "trip_branch_39_areas.csv")))
    assert [r["area"] for r in areas] == ["1", "2", "3"]
    assert exit_code(reports) == 2


def test_emit_missing_directory(tmp_path, ieee14):
    with pytest.raises(ReportError):
        emit_report([], tmp_path / "nope", ieee14)


def test_summary_for_failed_event():
    rep = CascadeReport("trip:branch:9", (), Outcome.UNRESOLVED, error="boom")
    assert summary_row(rep)["stages"] == 0
    assert exit_code([rep]) == 3


def test_exit_code_priority():
    mk = lambda o: CascadeReport("x", (), o)
    assert exit_code([mk(Outcome.SECURE)]) == 0
    assert exit_code([mk(Outcome.SECURE), mk(Outcome.PARTIAL_COLLAPSE)]) == 2
    assert exit_code([mk(Outcome.SYSTEM_BLACKOUT), mk(Outcome.TRUNCATED)]) == 3


@pytest.mark.parametrize("spec, stem", [("trip:branch:4", "trip_branch_4"), ("none", "none"), ("::", "event")])
def test_report_stem(spec, stem):
    assert report_stem(spec) == stem

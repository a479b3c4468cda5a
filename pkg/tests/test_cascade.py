import json
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from cascadeflow import case_path, load_case, parse_case
from cascadeflow.cascade import (CascadeParams, IslandStatus, Outcome, ViolationKind, check_limits,
                                 run_cascade)
from cascadeflow.network import BRANCH, GEN, ContingencyEvent, find_islands
from cascadeflow.stage1 import SolverOptions, solve_island
from oracles import branch_flow, lossless_line_sending_mva, polar_power_flow

DOWN = {IslandStatus.COLLAPSED, IslandStatus.BLACKED_OUT}


def _event(spec):
    return ContingencyEvent.parse(spec)


# -- limit checks ------------------------------------------------------------------


def test_branch_overload_against_closed_form(parallel3):
    net = parallel3
    event = _event("trip:branch:1")
    from cascadeflow.network import apply_event
    tripped = apply_event(net, event)
    island = find_islands(tripped)[0]
    sol = solve_island(tripped, island)
    (v,) = check_limits(tripped, island, sol.result)
    assert v.device == (BRANCH, 2) and v.kind is ViolationKind.BRANCH_OVERLOAD
    assert v.observed == pytest.approx(lossless_line_sending_mva(100.0, 0.1), rel=1e-6)
    assert v.limit == 71.8


def test_branch_flow_matches_oracle(doc_of, ieee14):
    doc = doc_of("ieee14")
    volts, _, _ = polar_power_flow(doc)
    island = find_islands(ieee14)[0]
    sol = solve_island(ieee14, island)
    from cascadeflow.stage1 import branch_flows
    flows = branch_flows(ieee14, island, sol.result.state)
    for br in doc["branches"]:
        sf, st_ = branch_flow(doc, volts, br["id"])
        assert abs(flows[br["id"]][0] - sf) < 1e-4 and abs(flows[br["id"]][1] - st_) < 1e-4


def test_generator_voltage_trip(doc_of):
    doc = doc_of("two_bus")
    doc["generators"][0].update(v_set_pu=0.89, v_trip_lo=0.9)
    net = parse_case(doc)
    island = find_islands(net)[0]
    sol = solve_island(net, island)
    viol = check_limits(net, island, sol.result)
    assert [(v.device, v.kind) for v in viol] == [((GEN, 1), ViolationKind.GEN_VOLTAGE)]
    assert viol[0].observed == pytest.approx(0.89, abs=1e-9)


def test_relay_deadband_suppresses_marginal_trip(parallel3):
    params = CascadeParams(relay_deadband=0.5)
    rep = run_cascade(parallel3, _event("trip:branch:1"), params)
    assert rep.outcome is Outcome.SECURE and len(rep.stages) == 1


def test_params_validation():
    with pytest.raises(ValueError):
        CascadeParams(relay_deadband=-0.1)
    with pytest.raises(ValueError):
        CascadeParams(max_stages=0)


# -- cascades --------------------------------------------------------------------


def test_parallel_line_trace(parallel3):
    """Losing one of two identical lines doubles the flow on the survivor,
    which then trips and isolates bus 2; the generator droops back."""
    rep = run_cascade(parallel3, _event("trip:branch:1"))
    assert rep.outcome is Outcome.PARTIAL_COLLAPSE
    assert [s.trips for s in rep.stages] == [((BRANCH, 1),), ((BRANCH, 2),)]
    s1, s2 = rep.stages
    assert [(v.device, v.kind) for v in s1.violations] == [((BRANCH, 2), ViolationKind.BRANCH_OVERLOAD)]
    assert [i.status for i in s1.islands] == [IslandStatus.VIOLATED]
    assert s2.violations == ()
    assert [(i.buses, i.status) for i in s2.islands] == [((1, 3), IslandStatus.SECURE),
                                                          ((2,), IslandStatus.BLACKED_OUT)]
    # lossless network: 120 MW set-point, 20 MW left, 100 MW/Hz droop
    assert s2.islands[0].delta_f_hz == pytest.approx(1.0, abs=1e-8)
    assert rep.tripped == ((BRANCH, 1), (BRANCH, 2))


def test_pre_contingency_parallel_flows(parallel3):
    island = find_islands(parallel3)[0]
    sol = solve_island(parallel3, island)
    from cascadeflow.stage1 import branch_flows
    flows = branch_flows(parallel3, island, sol.result.state)
    half = lossless_line_sending_mva(50.0, 0.1) / 100.0
    assert abs(abs(flows[1][0]) - half) < 1e-8 and abs(abs(flows[2][0]) - half) < 1e-8
    assert check_limits(parallel3, island, sol.result) == []


def test_secure_single_stage(ieee14):
    rep = run_cascade(ieee14, _event("trip:branch:20"))
    assert rep.outcome is Outcome.SECURE and len(rep.stages) == 1
    assert rep.final_network.inactive == {(BRANCH, 20)}


def test_cascade_is_deterministic(cascade30):
    a = run_cascade(cascade30, _event("trip:branch:39"))
    b = run_cascade(cascade30, _event("trip:branch:39"))
    assert a.to_json() == b.to_json()


def test_null_event_on_secure_case(ieee14):
    rep = run_cascade(ieee14, None)
    assert rep.event == "none" and rep.outcome is Outcome.SECURE
    assert len(rep.stages) == 1 and rep.stages[0].trips == ()


def test_max_stages_truncates(parallel3):
    rep = run_cascade(parallel3, _event("trip:branch:1"), CascadeParams(max_stages=1))
    assert rep.outcome is Outcome.TRUNCATED and len(rep.stages) == 1


def test_solver_failure_is_unresolved(ieee14):
    params = CascadeParams(solver=SolverOptions(max_iter=1))
    rep = run_cascade(ieee14, _event("trip:branch:20"), params)
    assert rep.outcome is Outcome.UNRESOLVED
    assert rep.final_stage.islands[0].status is IslandStatus.UNRESOLVED


def test_unknown_device_raises(ieee14):
    with pytest.raises(KeyError):
        run_cascade(ieee14, _event("trip:branch:999"))


def test_report_json_shape(parallel3):
    rep = run_cascade(parallel3, _event("trip:branch:1"))
    doc = json.loads(rep.to_json())
    assert doc["outcome"] == "PARTIAL_COLLAPSE" and doc["event"] == "trip:branch:1"
    assert doc["stages"][1]["trips"] == ["trip:branch:2"]
    assert doc["stages"][0]["violations"][0]["device"] == "branch:2"


def test_multi_island_blackout(cascade30):
    rep = run_cascade(cascade30, _event("trip:branch:39"))
    final = rep.final_stage.islands
    assert len(final) >= 3
    assert rep.outcome is Outcome.SYSTEM_BLACKOUT
    assert all(i.status in DOWN for i in final)


def _check_invariants(net, rep):
    trips = [set(s.trips) for s in rep.stages]
    for i in range(len(trips)):
        for j in range(i + 1, len(trips)):
            assert not trips[i] & trips[j]
    all_buses = {b.id for b in net.buses}
    for s in rep.stages:
        seen = [b for isl in s.islands for b in isl.buses]
        assert sorted(seen) == sorted(all_buses)
    final = rep.final_stage.islands
    statuses = {i.status for i in final}
    if rep.outcome is Outcome.SYSTEM_BLACKOUT:
        assert statuses <= DOWN
    if statuses <= DOWN:
        assert rep.outcome in (Outcome.SYSTEM_BLACKOUT, Outcome.TRUNCATED)
    if rep.outcome is Outcome.SECURE:
        assert statuses == {IslandStatus.SECURE}


CASCADE30 = load_case(case_path("cascade30"))
IEEE14 = load_case(case_path("ieee14"))


@settings(max_examples=12, deadline=None)
@given(st.sampled_from([("cascade30", b) for b in range(1, 42)] + [("ieee14", b) for b in range(1, 21)]))
def test_cascade_invariants(choice):
    name, bid = choice
    net = CASCADE30 if name == "cascade30" else IEEE14
    rep = run_cascade(net, _event(f"trip:branch:{bid}"))
    _check_invariants(net, rep)


def test_fixed_point_after_cascade(cascade30):
    """Re-running on a secure cascade's terminal network trips nothing."""
    rep = run_cascade(cascade30, _event("trip:branch:41"))
    assert rep.outcome is Outcome.SECURE
    again = run_cascade(rep.final_network, None)
    assert again.outcome is Outcome.SECURE and len(again.stages) == 1
    assert again.final_stage.islands == rep.final_stage.islands

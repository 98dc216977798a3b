import copy

from gasper_confirm.chain import make_block
from gasper_confirm.monitors import (
    TraceData, check_monotonicity, check_safety, gasper_properties, latency_table, monitor_report,
)
from gasper_confirm.simnet import ScenarioConfig, Trace, run_scenario


def base_trace():
    cfg = ScenarioConfig(name="mon", num_validators=8, slots_per_epoch=4, horizon_slots=32, seed=3,
                         trace_deliveries=False)
    trace, _ = run_scenario(cfg)
    return trace


def insert(trace, event):
    evs = list(trace.events)
    i = next(k for k, e in enumerate(evs) if e[0] > event[0])
    evs.insert(i, event)
    return Trace(evs)


def test_fault_free_report_passes():
    rep = monitor_report(base_trace())
    assert rep["pass"] and rep["audit"]["clean"]
    assert all(f["violations"] == 0 for f in rep["safety"].values())
    assert rep["latency"]["aggregate"]["lmd"]["max"] == 1
    # with delta > 0 a last-slot block can miss the previous-slot snapshot the epoch-boundary branch reads
    for row in rep["latency"]["rows"][:-1]:
        last = (row["slot"] + 1) % 4 == 0
        assert row["hfc"] == 1 or (last and row["hfc"] == 2)


def _with_bogus_confirmation():
    trace = base_trace()
    data = TraceData(trace)
    side = make_block(9, 0, data.store.genesis, tag="side")
    tick = data.time.slot_start(10)
    observer = next(a for _, k, a, p in trace.events if k == "confirm")
    trace = insert(trace, (data.time.slot_start(9), "block", -1, side.to_json()))
    return insert(trace, (tick, "confirm", observer, {"rule": "lmd", "slot": 10, "passed": side.id,
                                                      "tip": side.id, "gf": None}))


def test_safety_monitor_catches_conflicting_confirmation():
    data = TraceData(_with_bogus_confirmation())
    frag = check_safety(data, "lmd")
    assert frag["violations"] == 1 and not frag["pass"]
    void = check_safety(data, "lmd", void=True)
    assert void["pass"] and void["void"]


def test_monotonicity_monitor_catches_lost_confirmation():
    data = TraceData(_with_bogus_confirmation())
    assert check_monotonicity(data, "lmd")["violations"] == 1
    assert check_monotonicity(data, "hfc")["violations"] == 0


def test_gasper_p2_violation_detected():
    trace = base_trace()
    data = TraceData(trace)
    b = data.heads[-1][3]
    obs = data.heads[-1][2]
    bad = (data.end_tick, "checkpoints", obs, {"slot": 999, "gj": [b, 3], "gf": [b, 3], "gj_total": 8})
    evs = list(trace.events)
    evs.insert(len(evs) - 1, bad)
    res = gasper_properties(TraceData(Trace(evs)))
    assert not res["gj_view_after_gf_view"]["pass"]
    assert res["one_justified_per_epoch"]["pass"] and res["unrealized_epoch_bound"]["pass"]


def test_latency_table_rows():
    data = TraceData(base_trace())
    table = latency_table(data)
    assert table["seconds_per_slot"] == 12
    assert [r["slot"] for r in table["rows"]] == list(range(1, 32))
    assert all(r["lmd"] == 1 for r in table["rows"])


def test_void_premises_reported_not_failed():
    cfg = ScenarioConfig(name="heavy", num_validators=12, slots_per_epoch=4, horizon_slots=24, seed=4,
                         adversary=[0, 1, 2, 3, 4], strategy={"kind": "equivocate"}, trace_deliveries=False)
    trace, _ = run_scenario(cfg)
    rep = monitor_report(trace)
    assert not rep["audit"]["clean"]
    for r in rep["safety"]:
        assert not rep["audit"]["premises"][r]["safety"]
        assert rep["safety"][r]["pass"]
    strict = monitor_report(trace, strict=True)
    assert strict["audit"] == rep["audit"]

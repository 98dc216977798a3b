"""Acceptance criteria 1-9, each at its stated tolerance.

A pass/fail line per criterion is printed in the pytest terminal summary.
"""

import math
import random
import time
from fractions import Fraction

import pytest

from gasper_confirm.confirmation import (
    SafetyParams, appendix_beta_bound, hon_ffg_ratio, justification_threshold, lmd_monotonicity_bound,
    lmd_safety_threshold,
)
from gasper_confirm.monitors import TraceData, check_monotonicity, monitor_report, raw_flips, summary_rows
from gasper_confirm.scenarios import (
    SWEEP_STRATEGIES, latency_config, replay_counterexample, run_sweep, sweep_config, sweep_totals,
)
from gasper_confirm.simnet import run_scenario

from conftest import record
from test_forkchoice import check_against_oracle

F = Fraction
SWEEP_SEEDS = range(200)


@pytest.fixture(scope="module")
def latency_run():
    cfg = latency_config()
    t0 = time.perf_counter()
    trace, _ = run_scenario(cfg)
    report = monitor_report(trace)
    return cfg, trace, report, time.perf_counter() - t0


@pytest.fixture(scope="module")
def sweep():
    t0 = time.perf_counter()
    rows, reports = run_sweep(SWEEP_STRATEGIES, SWEEP_SEEDS, keep_reports=True)
    return rows, reports, time.perf_counter() - t0


def test_criterion_1_one_slot_confirmation(latency_run):
    cfg, trace, report, secs = latency_run
    rows = report["latency"]["rows"]
    lat = [r["hfc"] for r in rows]
    ok = (cfg.num_validators == 64 and cfg.slots_per_epoch == 32 and cfg.horizon_slots == 128
          and len(rows) == 127 and all(x == 1 for x in lat) and secs < 5)
    record(1, ok, f"{len(rows)} blocks, hfc latencies {sorted(set(lat), key=str)}, runtime {secs:.2f}s (< 5s)")
    assert ok


def test_criterion_2_latency_contrast(latency_run):
    cfg, trace, report, _ = latency_run
    table = {(r["slot"], r["rule"]): r for r in summary_rows(report)}
    first = table[(32, "hfc")]
    ok = (first["finalization_slots"] == 64 and first["finalization_seconds"] == 768
          and first["latency_slots"] == 1 and first["latency_seconds"] == 12)
    record(2, ok, f"block at slot 32: finalized after {first['finalization_slots']} slots "
                  f"({first['finalization_seconds']} s), fast-confirmed after {first['latency_slots']} slot "
                  f"({first['latency_seconds']} s)")
    assert ok


def test_criterion_3_safety_sweep(sweep):
    rows, reports, secs = sweep
    totals = sweep_totals(rows)
    cfg = sweep_config("equivocate", 0)
    tpe = cfg.ticks_per_slot * cfg.slots_per_epoch
    shape_ok = all(
        Fraction(r["beta"]) <= F(1, 5) and r["gst"] <= tpe for r in rows)
    horizon_ok = all(
        rep["ggst"] + 3 * tpe <= rep_cfg_horizon(rep) for rep in reports)
    violations = sum(t["safety_violations"] for t in totals.values())
    covered = all(t["safety_premise_cells"] > 0 for t in totals.values())
    ok = shape_ok and horizon_ok and covered and violations == 0 and secs < 120 and len(reports) == 600
    detail = ", ".join(f"{r}: {t['safety_violations']} in {t['safety_premise_cells']} clean cells"
                       for r, t in totals.items())
    record(3, ok, f"{len(reports)} runs in {secs:.1f}s (< 120s); {detail}")
    assert ok


def rep_cfg_horizon(rep):
    cfg = sweep_config(rep["strategy"], rep["seed"])
    return cfg.time.slot_start(cfg.horizon_slots)


def test_criterion_4_monotonicity(sweep):
    rows, _, _ = sweep
    totals = sweep_totals(rows)
    sweep_viol = sum(t["monotonicity_violations"] for t in totals.values())
    covered = all(t["monotonicity_premise_cells"] > 0 for t in totals.values())
    void = sum(t["void_violations"] for t in totals.values())
    trace, _ = replay_counterexample("non-monotone-q")
    data = TraceData(trace)
    flips = raw_flips(data)
    unguarded = check_monotonicity(data, "lmd", guarded=False)
    confirmed = [p for _, _, _, p in data.raw if p.get("confirmed_lmd") is not None]
    first = next((i for i, p in enumerate(confirmed) if p["confirmed_lmd"]), None)
    never_lost = first is not None and all(p["confirmed_lmd"] for p in confirmed[first:])
    ok = sweep_viol == 0 and covered and len(flips) >= 1 and unguarded["violations"] == 0 and never_lost
    detail = ", ".join(f"{r}: {t['monotonicity_violations']} in {t['monotonicity_premise_cells']} clean cells"
                       for r, t in totals.items())
    record(4, ok, f"sweep {detail}; {void} violations under void premises reported separately; "
                  f"replay raw flips {[(f['true_slot'], f['false_slot']) for f in flips]}, "
                  f"lmd confirmation lost {unguarded['violations']} times")
    assert ok


def test_criterion_5_gj_weight_replay():
    trace, _ = replay_counterexample("gj-weight")
    ev = [p for _, k, _, p in trace.events if k == "gj_weight"]
    e = ev[0] if ev else {}
    eps = Fraction(e.get("epsilon", "0"))
    ok = bool(ev) and eps > 0 and e["total"] != e["total_other"] and e["precondition_holds"] is False \
        and e["precondition"]
    record(5, ok, f"totals {e.get('total')} vs {e.get('total_other')}, epsilon {eps}; "
                  f"logged precondition holds={e.get('precondition_holds')}")
    assert ok


def test_criterion_6_ghost_oracle():
    mismatches = [s for s in range(1000) if (lambda r: r[0] != r[1])(check_against_oracle(10_000 + s))]
    ok = not mismatches
    record(6, ok, f"1000 random views, {len(mismatches)} mismatches against brute force")
    assert ok


def test_criterion_7_formulas():
    checks = {}
    checks["honFfgRatio(0) = 2/3"] = hon_ffg_ratio(0) == F(2, 3)
    checks["honFfgRatio(1/6) = 1"] = hon_ffg_ratio(F(1, 6)) == 1
    b4 = lmd_monotonicity_bound(F(1, 80))
    checks["(1/4)(1-1/80) = 79/320 ~ 0.246"] = b4 == F(79, 320) and abs(float(b4) - 0.246) < 1e-3
    ba = appendix_beta_bound(F(1, 80))
    checks["(5-sqrt(9+16/80))/8 ~ 0.246"] = abs(ba - (5 - math.sqrt(9 + 16 / 80)) / 8) < 1e-15 and round(ba, 3) == 0.246
    rng = random.Random(7)
    same = 0
    for _ in range(1000):
        total = rng.randint(1, 10**6)
        window = rng.randint(1, total)
        beta = F(rng.randint(0, 99), 100)
        lam = rng.choice([None, F(rng.randint(0, 10**6))])
        p = SafetyParams(beta=beta, lam=lam, proposer_score=F(rng.randint(0, 10), 10))
        bf = p.boost_fraction(rng.choice([2, 4, 8, 32]))
        if (lmd_safety_threshold(window, total, p, bf, full=True) == lmd_safety_threshold(window, total, p, bf)
                and justification_threshold(total, p, full=True) == justification_threshold(total, p)):
            same += 1
    checks["Alg-5 thresholds = Alg-4 at zero rates (1000 inputs)"] = same == 1000
    ok = all(checks.values())
    record(7, ok, f"{sum(checks.values())}/{len(checks)} checks; 79/320 = {float(b4):.6f}, "
                  f"appendix bound = {ba:.6f}")
    assert ok


def test_criterion_8_gasper_properties(sweep):
    _, reports, _ = sweep
    counts = {"one_justified_per_epoch": 0, "gj_view_after_gf_view": 0, "unrealized_epoch_bound": 0}
    applicable = 0
    for rep in reports:
        if not Fraction(rep["audit"]["realized_window_beta"]) < F(1, 3):
            continue
        applicable += 1
        for k in counts:
            counts[k] += not rep["gasper"][k]["pass"]
    ok = applicable == len(reports) and not any(counts.values())
    record(8, ok, f"{applicable} runs with realized beta < 1/3; failing runs per property {counts}")
    assert ok


def test_criterion_9_determinism(tmp_path):
    from gasper_confirm.cli import main

    cfgs = [latency_config(horizon_slots=64)] + [sweep_config(s, 11) for s in SWEEP_STRATEGIES]
    same = [run_scenario(c)[0].to_jsonl() == run_scenario(c)[0].to_jsonl() for c in cfgs]
    files = []
    for name in ("non-monotone-q", "gj-weight"):
        outs = []
        for k in range(2):
            d = tmp_path / f"{name}-{k}"
            main(["replay", name, "--out", str(d)])
            outs.append((d / "trace.jsonl").read_bytes())
        files.append(outs[0] == outs[1])
    ok = all(same) and all(files)
    record(9, ok, f"{sum(same)}/{len(same)} scenario reruns and {sum(files)}/{len(files)} replay trace files "
                  "byte-identical")
    assert ok

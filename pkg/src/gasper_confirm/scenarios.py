"""Canned scenario builders: the one-slot latency run, sweep cells and counterexample replays."""

from __future__ import annotations

import random
from fractions import Fraction

from .chain import CommitteeSchedule
from .confirmation import SafetyParams
from .simnet import ScenarioConfig, run_scenario

SWEEP_STRATEGIES = ("equivocate", "withhold", "conflicting_ffg")


def latency_config(seed=0, **over) -> ScenarioConfig:
    """GST = 0, no adversary, 64 validators, 32-slot epochs, 4 epochs."""
    kw = dict(name="latency", num_validators=64, slots_per_epoch=32, delta=0, gst=0, horizon_slots=128,
              seed=seed, trace_deliveries=False)
    kw.update(over)
    return ScenarioConfig(**kw)


def fixed_adversary(n, slots_per_epoch, seed, per_committee):
    """Pick per_committee members of every fixed committee as Byzantine."""
    sched = CommitteeSchedule(tuple(range(n)), slots_per_epoch, seed, "fixed")
    rng = random.Random(f"adversary:{seed}")
    out = []
    for part in sched.fixed_partition():
        out.extend(rng.sample(sorted(part), per_committee))
    return sorted(out)


def sweep_config(strategy: str, seed: int, beta=None, **over) -> ScenarioConfig:
    """One cell of the adversarial sweep.

    Committees are a fixed partition with the same number of Byzantine members
    in each, so every committee window has the same adversarial fraction.
    Without beta, even seeds use 5-member committees (fraction 1/5) and odd
    seeds 7-member ones (fraction 1/7). With beta, committees have 20 members
    and round(20 * beta) of them are Byzantine.
    """
    E = 4
    if beta is None:
        per = 5 if seed % 2 == 0 else 7
        k = 1
    else:
        per = 20
        k = round(Fraction(beta) * per)
    n = per * E
    beta = Fraction(k, per)
    rng = random.Random(f"gst:{seed}")
    ticks = 12
    gst = rng.randint(0, E * ticks)
    params = SafetyParams(beta=min(beta, Fraction(99, 100)), proposer_score=Fraction(2, 5),
                          exit_rate=Fraction(1, 100), reward_rate=Fraction(1, 100), penalty_rate=Fraction(1, 100))
    strat = {"kind": strategy}
    if strategy == "withhold":
        strat["depth"] = 1 + seed % 3
    elif strategy == "conflicting_ffg":
        strat["double"] = "auto"
    kw = dict(name=f"sweep-{strategy}", num_validators=n, slots_per_epoch=E, ticks_per_slot=ticks, delta=2,
              gst=gst, horizon_slots=8 * E, seed=seed, adversary=fixed_adversary(n, E, seed, k),
              strategy=strat, params=params, committee_mode="fixed", trace_deliveries=False)
    kw.update(over)
    return ScenarioConfig(**kw)


SWEEP_FIELDS = ["strategy", "seed", "beta", "rule", "gst", "clean", "safety_premise", "safety_checked",
                "safety_violations", "safety_void", "monotonicity_premise", "monotonicity_checked",
                "monotonicity_violations", "monotonicity_void",
                "gasper_pass", "latency_p50", "finalization_p50", "pass"]


def sweep_rows(strategy, seed, report) -> list:
    rows = []
    audit = report["audit"]
    gasper_ok = all(g["pass"] for g in report["gasper"].values())
    agg = report["latency"]["aggregate"]
    for rule, saf in report["safety"].items():
        mon = report["monotonicity"][rule]
        prem = audit["premises"][rule]
        rows.append({
            "strategy": strategy, "seed": seed, "beta": audit["beta"], "rule": rule,
            "gst": report.get("gst_tick", ""), "clean": audit["clean"],
            "safety_premise": prem["safety"], "monotonicity_premise": prem["monotonicity"],
            "safety_checked": saf["checked"], "safety_violations": saf["violations"], "safety_void": saf["void"],
            "monotonicity_checked": mon["checked"], "monotonicity_violations": mon["violations"],
            "monotonicity_void": mon["void"], "gasper_pass": gasper_ok,
            "latency_p50": agg.get(rule, {}).get("p50"), "finalization_p50": agg.get("finalization", {}).get("p50"),
            "pass": report["pass"],
        })
    return rows


def sweep_totals(rows) -> dict:
    """Per rule: violations where the rule's premises held, and violations reported as void."""
    out = {}
    for r in rows:
        t = out.setdefault(r["rule"], {"cells": 0, "safety_premise_cells": 0, "monotonicity_premise_cells": 0,
                                       "safety_violations": 0, "monotonicity_violations": 0,
                                       "void_violations": 0})
        t["cells"] += 1
        for kind in ("safety", "monotonicity"):
            n = r[f"{kind}_violations"]
            if r[f"{kind}_premise"]:
                t[f"{kind}_premise_cells"] += 1
                t[f"{kind}_violations"] += n
            else:
                t["void_violations"] += n
    return out


def _sweep_cell(args):
    from .monitors import monitor_report

    strategy, seed, beta, over, strict = args
    cfg = sweep_config(strategy, seed, beta, **over)
    trace, _ = run_scenario(cfg)
    report = monitor_report(trace, strict=strict)
    report["gst_tick"] = cfg.gst
    report["strategy"] = strategy
    return strategy, seed, report


def run_sweep(strategies=SWEEP_STRATEGIES, seeds=range(200), betas=(None,), over=None, strict=False,
              workers=1, keep_reports=False):
    """Run every (strategy, beta, seed) cell; returns (rows, reports)."""
    jobs = [(s, seed, b, dict(over or {}), strict) for s in strategies for b in betas for seed in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sweep_cell, jobs, chunksize=4))
    else:
        results = [_sweep_cell(j) for j in jobs]
    rows, reports = [], []
    for strategy, seed, report in results:
        rows.extend(sweep_rows(strategy, seed, report))
        if keep_reports:
            reports.append(report)
    return rows, reports


# counterexample replays -----------------------------------------------------

REPLAYS = ("non-monotone-q", "gj-weight")


def _schedule(n, E, seed):
    return CommitteeSchedule(tuple(range(n)), E, seed, "fixed")


def non_monotone_q_config(max_seed=500) -> ScenarioConfig:
    """A block whose LMD support ratio passes at one slot and drops below threshold the next.

    Before GST (start of slot 8) the honest set is split into H1 and a 9-member
    H2 that sees a rival block Y instead of the H1 chain through b (slot 2).
    None of H2 sits in the committees of slots 8 or 9, so at slot 9 the
    support for b is 31/40 against a threshold of 30/40. The two Byzantine
    members of committee 9 then vote for Y, leaving 29/40 at slot 10.
    """
    E, n, ticks = 4, 40, 12
    for seed in range(max_seed):
        sched = _schedule(n, E, seed)
        byz = fixed_adversary(n, E, seed, 2)
        byzs = set(byz)
        props = {s: sched.proposer(s) for s in range(1, 12)}
        if props[1] in byzs or props[2] in byzs or props[3] not in byzs:
            continue
        c8, c9 = set(sched.committee(8)), set(sched.committee(9))
        honest = [v for v in range(n) if v not in byzs]
        observer = next(v for v in honest if v not in (props[1], props[2]))
        pool = [v for v in honest if v not in c8 | c9 and v not in (props[1], props[2], observer)]
        if len(pool) < 9:
            continue
        h2 = sorted(pool[:9])
        h1 = [v for v in honest if v not in h2]
        gst = 8 * ticks
        flip = sorted(byzs & c9)
        actions = [
            {"tick": 2 * ticks + 1, "action": "label", "label": "b", "block": "slot:2"},
            {"tick": 3 * ticks, "action": "propose", "slot": 3, "parent": "slot:1", "label": "Y",
             "to": "group:H2", "at": "now"},
            {"tick": 9 * ticks + 4, "action": "ghost", "signers": flip, "slot": 9, "block": "label:Y"},
        ]
        strategy = {"kind": "scripted", "groups": {"H1": h1, "H2": h2},
                    "partition": {"groups": ["H1", "H2"], "from": 2 * ticks, "until": gst},
                    "byz_group": "H1", "fast": True, "skip_propose": [3], "skip_vote": [[9, v] for v in flip],
                    "actions": actions}
        params = SafetyParams(beta=Fraction(1, 5), proposer_score=Fraction(2, 5))
        return ScenarioConfig(name="non-monotone-q", num_validators=n, slots_per_epoch=E, ticks_per_slot=ticks,
                              delta=2, gst=gst, horizon_slots=6 * E, seed=seed, adversary=byz,
                              strategy=strategy, rules=["lmd"], params=params, committee_mode="fixed",
                              observers=[observer], track=["b"])
    raise RuntimeError("no seed satisfies the construction")


def gj_weight_config(max_seed=2000) -> ScenarioConfig:
    """Two honest observers whose greatest justified checkpoints carry different total weight.

    Byzantine validators X sign conflicting FFG votes early in epoch 1; an
    honest proposer includes the evidence before the epoch-2 checkpoint block,
    so that checkpoint's balances omit X. The Byzantine proposer of slot 11
    includes the votes justifying the epoch-2 checkpoint but releases its
    block to observer v one tick before slot 12, while v' only receives it
    Delta later. At slot 12, v's greatest justified checkpoint is the
    epoch-2 one (X slashed), v''s is the epoch-1 one (X counted).
    """
    E, n, ticks, delta = 4, 20, 12, 2
    for seed in range(max_seed):
        sched = _schedule(n, E, seed)
        byz = fixed_adversary(n, E, seed, 1)[:2]
        byzs = set(byz)
        props = {s: sched.proposer(s) for s in range(1, 13)}
        if props[11] not in byzs:
            continue
        if any(props[s] in byzs for s in range(1, 11)):
            continue
        duty = {v: sched.duty(v, 1) for v in byz}
        if max(duty.values()) > 6:
            continue
        honest = [v for v in range(n) if v not in byzs]
        cands = [v for v in honest if v != props[12]]
        v, w = cands[0], cands[1]
        actions = []
        for x in byz:
            d = duty[x]
            actions.append({"tick": d * ticks + 4, "action": "ffg", "signers": [x], "slot": d,
                            "source": {"block": "genesis", "epoch": 0},
                            "target": {"block": "genesis", "epoch": 1}})
        actions.append({"tick": 11 * ticks, "action": "propose", "slot": 11, "parent": "head", "label": "B11",
                        "to": "none"})
        actions.append({"tick": 12 * ticks - 1, "action": "release", "label": "B11", "to": [v], "at": "now",
                        "relay": "max"})
        strategy = {"kind": "scripted", "skip_propose": [11], "actions": actions,
                    "checks": [{"slot": 12, "kind": "gj_weight", "observers": [v, w]}]}
        params = SafetyParams(beta=Fraction(1, 10), proposer_score=Fraction(2, 5))
        return ScenarioConfig(name="gj-weight", num_validators=n, slots_per_epoch=E, ticks_per_slot=ticks,
                              delta=delta, gst=0, horizon_slots=5 * E, seed=seed, adversary=byz,
                              strategy=strategy, rules=["lmd"], params=params, committee_mode="fixed",
                              observers=[v, w])
    raise RuntimeError("no seed satisfies the construction")


def replay_config(name: str) -> ScenarioConfig:
    if name == "non-monotone-q":
        return non_monotone_q_config()
    if name == "gj-weight":
        return gj_weight_config()
    raise ValueError(f"unknown replay {name!r}; choose from {', '.join(REPLAYS)}")


def replay_counterexample(name: str):
    """Run one of the hand-built counterexamples; returns (trace, simulation)."""
    return run_scenario(replay_config(name))

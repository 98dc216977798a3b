"""Offline oracles over simulation traces: safety, monotonicity, Gasper properties, audits, latency."""

from __future__ import annotations

import csv
import io
import json
from bisect import bisect_left
from fractions import Fraction

from .chain import Block, to_json_number
from .confirmation import (
    Inadmissible, appendix_beta_ok, hon_ffg_ratio, hon_ffg_ratio_var, lmd_monotonicity_bound, rates_admissible,
)
from .ffg import Checkpoint, FfgVote, checkpoint_of, justification, voting_source
from .simnet import ScenarioConfig, Simulation, Trace

SECONDS_PER_SLOT = 12
THIRD = Fraction(1, 3)


def _num(x):
    if isinstance(x, str):
        return Fraction(x)
    return x


def block_from_json(d) -> Block:
    return Block(d["id"], d["slot"], d["proposer"], d["parent"],
                 tuple(FfgVote.from_json(v) for v in d["ffg_votes"]),
                 tuple(d["slashings"]),
                 tuple((v, _num(x)) for v, x in d["eba_delta"]),
                 d["tag"])


class TraceData:
    """Indexes a trace and rebuilds the block tree it describes."""

    def __init__(self, trace: Trace):
        self.trace = trace
        self.cfg = ScenarioConfig.from_json(trace.scenario)
        sim = Simulation(self.cfg)
        self.time = sim.time
        self.store = sim.store
        self.schedule = sim.schedule
        self.honest = set(sim.honest)
        self.byz = set(sim.byz)
        self.heads = []
        self.confirms = []
        self.checkpoints = {}
        self.ffg_votes = []
        self.raw = []
        self.gj_checks = []
        for i, (tick, kind, actor, p) in enumerate(trace.events):
            if kind == "block":
                blk = block_from_json(p)
                if blk.parent is not None:
                    self.store.add(blk, check_proposer=False)
            elif kind == "head":
                self.heads.append((i, tick, actor, p["head"]))
            elif kind == "confirm":
                self.confirms.append((i, tick, actor, p))
            elif kind == "checkpoints":
                self.checkpoints[(actor, p["slot"])] = (Checkpoint.from_json(p["gj"]), Checkpoint.from_json(p["gf"]))
            elif kind == "ffg_vote":
                self.ffg_votes.append((i, actor, FfgVote.from_json(p["vote"]), bool(p.get("withheld"))))
            elif kind == "raw_safe":
                self.raw.append((i, tick, actor, p))
            elif kind == "gj_weight":
                self.gj_checks.append((i, tick, actor, p))
        self.end_tick = self.time.slot_start(self.cfg.horizon_slots)
        self.ggst = self.time.ggst(self.cfg.gst)

    def anc(self, a, d) -> bool:
        return a in self.store.ancestors(d)

    def meet(self, a, b):
        if a is None:
            return b
        if b is None:
            return a
        store = self.store
        while not self.anc(a, b):
            a = store.parent(a)
        return a

    def sg(self, b, t) -> bool:
        """Security guard: block from the current or previous epoch, with that epoch after GGST."""
        et = self.time.epoch_at(t)
        return self.store.epoch(b) >= et - 1 and self.time.slot_start(self.time.first_slot(et - 1)) >= self.ggst \
            if et >= 1 else False


# safety ---------------------------------------------------------------------

def _suffix_meets(data: TraceData):
    """Per head sample index k: meet of every honest head sampled at index >= k."""
    heads = data.heads
    out = [None] * (len(heads) + 1)
    acc = None
    for k in range(len(heads) - 1, -1, -1):
        if heads[k][2] in data.honest:
            acc = data.meet(acc, heads[k][3])
        out[k] = acc
    return out


def check_safety(data: TraceData, rule: str, void=False) -> dict:
    """Every guarded confirmation must stay an ancestor of all later honest heads."""
    heads = data.heads
    meets = _suffix_meets(data)
    ticks = [h[1] for h in heads]
    limit = data.end_tick - data.time.slot_start(2 * data.time.slots_per_epoch)
    checked = skipped = 0
    violations = []
    for off, tick, obs, p in data.confirms:
        if p["rule"] != rule:
            continue
        cands = []
        if p["tip"] is not None and data.sg(p["tip"], tick):
            cands.append(p["tip"])
        if rule == "appendix" and p.get("gf") and p["gf"] != data.store.genesis:
            cands.append(p["gf"])
        if not cands:
            continue
        if tick > limit:
            skipped += 1
            continue
        k = bisect_left(ticks, tick)
        m = meets[k]
        for b in cands:
            checked += 1
            if m is None or data.anc(b, m):
                continue
            bad = next(h for h in heads[k:] if h[2] in data.honest and not data.anc(b, h[3]))
            violations.append({"offset": off, "observer": obs, "slot": p["slot"], "block": b,
                               "head_offset": bad[0], "head_actor": bad[2], "head": bad[3]})
    return _fragment(checked, violations, void, skipped=skipped)


def _fragment(checked, violations, void, **extra):
    out = {"checked": checked, "violations": len(violations), "void": bool(void and violations),
           "pass": not violations or bool(void),
           "first_violation": violations[0]["offset"] if violations else None,
           "details": violations[:20]}
    out.update(extra)
    return out


# monotonicity ---------------------------------------------------------------

def check_monotonicity(data: TraceData, rule: str, void=False, guarded=True) -> dict:
    """Every guarded confirmation stays confirmed at the observer's later evaluations.

    guarded=False drops the security guard and checks every confirmation.
    """
    per_obs = {}
    for off, tick, obs, p in data.confirms:
        if p["rule"] == rule:
            per_obs.setdefault(obs, []).append((off, tick, p))
    checked = 0
    violations = []
    for obs, recs in per_obs.items():
        for i, (off, tick, p) in enumerate(recs):
            b = p["tip"]
            if b is None or (guarded and not data.sg(b, tick)):
                continue
            for off2, tick2, p2 in recs[i + 1:]:
                checked += 1
                ok = p2["tip"] is not None and data.anc(b, p2["tip"])
                if not ok and rule == "appendix" and p2.get("gf"):
                    ok = data.anc(b, p2["gf"])
                if not ok:
                    violations.append({"offset": off, "observer": obs, "slot": p["slot"], "block": b,
                                       "lost_at_offset": off2, "lost_at_slot": p2["slot"]})
                    break
    return _fragment(checked, violations, void)


# Gasper properties ----------------------------------------------------------

def gasper_properties(data: TraceData) -> dict:
    store = data.store
    justified = {}
    p7 = []
    for bid in store.blocks:
        js = justification(store, bid)
        for c in js.unrealized:
            justified.setdefault(c.epoch, set()).add(c)
        if js.gu.epoch > store.epoch(bid):
            p7.append(bid)
    p1 = {e: sorted(c.block for c in cs) for e, cs in justified.items() if len(cs) > 1}
    p2 = []
    for (obs, slot), (gj, gf) in sorted(data.checkpoints.items()):
        gen = store.genesis
        if gj.block == gen and gf.block == gen and gj.epoch == gf.epoch == 0:
            continue
        if not (gj.epoch > gf.epoch and data.anc(gf.block, gj.block)):
            p2.append({"observer": obs, "slot": slot, "gj": gj.to_json(), "gf": gf.to_json()})
    return {
        "one_justified_per_epoch": {"pass": not p1, "violations": {str(k): v for k, v in p1.items()}},
        "gj_view_after_gf_view": {"pass": not p2, "violations": p2[:20]},
        "unrealized_epoch_bound": {"pass": not p7, "violations": p7[:20]},
    }


# assumption audit -----------------------------------------------------------

def _window_fractions(data: TraceData):
    """Largest adversarial fraction over committee windows [x, y] read by any indicator."""
    time, sched = data.time, data.schedule
    E = time.slots_per_epoch
    worst = Fraction(0)
    where = None
    seen = set()
    for (obs, slot), (gj, gf) in data.checkpoints.items():
        y = slot - 1
        bal = data.store.eba(gj.block)
        key = (y, bal.key())
        if y < 0 or key in seen:
            continue
        seen.add(key)
        members = set()
        lo = max(0, y - 2 * E)
        for x in range(y, -1, -1):
            members.update(sched.committee(x))
            if x < lo and x != 0:
                continue
            tot = bal.weight(members)
            if not tot:
                continue
            frac = Fraction(bal.weight(v for v in members if v in data.byz)) / tot
            if frac > worst:
                worst, where = frac, [x, y]
    return worst, where


def _honest_ffg_ratios(data: TraceData):
    """Per epoch after GGST: honest FFG weight for the canonical checkpoint over total honest weight."""
    time, store = data.time, data.store
    final = [h for h in data.heads if h[2] in data.honest]
    if not final:
        return {}
    head = final[-1][3]
    out = {}
    first = time.epoch_at(data.ggst)
    last = time.epoch_of(data.cfg.horizon_slots) - 1
    by_target = {}
    for off, actor, vote, withheld in data.ffg_votes:
        if actor in data.honest:
            by_target.setdefault((vote.source, vote.target), set()).add(actor)
    for e in range(first, last + 1):
        if e > store.epoch(head):
            break
        c = checkpoint_of(store, head, e)
        src = voting_source(store, c.block, e)
        bal = store.eba(c.block)
        hon = bal.weight(v for v, _ in bal.items() if v in data.honest)
        if not hon:
            continue
        out[e] = Fraction(bal.weight(by_target.get((src, c), ())), hon)
    return out


def _justification_liveness(data: TraceData):
    """Epochs after GGST whose canonical checkpoint never became justified within two epochs."""
    time, store = data.time, data.store
    final = [h for h in data.heads if h[2] in data.honest]
    if not final:
        return []
    head = final[-1][3]
    chain = store.chain(head)
    missing = []
    first = time.epoch_at(data.ggst)
    for e in range(first, time.epoch_of(data.cfg.horizon_slots) - 1):
        c = checkpoint_of(store, head, e)
        ok = any(c in justification(store, b).unrealized for b in chain if store.epoch(b) < e + 2)
        if not ok:
            missing.append(e)
    return missing


def _churn_audit(data: TraceData):
    """Realized exit, reward and penalty rates per churn epoch."""
    cfg = data.cfg
    if not cfg.churn:
        return {}
    sim = Simulation(cfg)
    out = {}
    for e in sorted({c.epoch for c in cfg.churn}):
        before = sim.churn_balances(e - 1)
        exits = sum(before[c.validator] for c in cfg.churn if c.epoch == e and c.kind == "exit")
        rewards = [c.amount for c in cfg.churn if c.epoch == e and c.kind == "reward"]
        pens = [c.amount for c in cfg.churn if c.epoch == e and c.kind == "penalty"]
        out[e] = {"exit": Fraction(exits, before.total) if before.total else Fraction(0),
                  "reward": max(rewards, default=Fraction(0)), "penalty": max(pens, default=Fraction(0))}
    return out


def audit_assumptions(data: TraceData, params=None) -> dict:
    params = params or data.cfg.params
    beta = params.beta
    bf = params.boost_fraction(data.time.slots_per_epoch)
    worst, where = _window_fractions(data)
    slashed = set()
    for bid in data.store.blocks:
        slashed |= justification(data.store, bid).slashed
    slashed_mass = data.store.eba(data.store.genesis).weight(slashed)
    ratios = _honest_ffg_ratios(data)
    liveness = _justification_liveness(data)
    churn = _churn_audit(data)
    window_ok = worst <= beta
    lam_ok = params.lam is None or slashed_mass <= params.lam
    try:
        hr = hon_ffg_ratio(beta)
    except Inadmissible:
        hr = None
    hrv = hon_ffg_ratio_var(beta, params.reward_rate, params.penalty_rate, params.exit_rate)
    ratio_ok = hr is not None and all(r > hr for r in ratios.values())
    ratio_var_ok = beta < Fraction(1, 6) and all(r > hrv for r in ratios.values())
    churn_ok = all(x["exit"] <= params.exit_rate and x["reward"] <= params.reward_rate
                   and x["penalty"] <= params.penalty_rate for x in churn.values())
    rates_bad = rates_admissible(params, bf)
    base_safety = window_ok and beta < THIRD and lam_ok and not liveness
    premises = {
        "lmd": {"safety": window_ok and not slashed,
                "monotonicity": window_ok and not slashed and beta < lmd_monotonicity_bound(bf)},
        "hfc": {"safety": base_safety and not data.cfg.churn,
                "monotonicity": base_safety and not data.cfg.churn and beta < Fraction(1, 6) and ratio_ok},
        "churn": {"safety": base_safety and churn_ok and not rates_bad,
                  "monotonicity": base_safety and churn_ok and not rates_bad and ratio_var_ok},
        "appendix": {"safety": base_safety and not data.cfg.churn,
                     "monotonicity": base_safety and not data.cfg.churn and appendix_beta_ok(beta, bf)},
    }
    return {
        "beta": str(beta),
        "realized_window_beta": str(worst),
        "worst_window": where,
        "window_ok": window_ok,
        "slashed": sorted(slashed),
        "slashed_mass": str(slashed_mass),
        "lambda": None if params.lam is None else str(params.lam),
        "lambda_ok": lam_ok,
        "honest_ffg_ratio": {str(e): str(r) for e, r in ratios.items()},
        "hon_ffg_ratio_required": None if hr is None else str(hr),
        "hon_ffg_ratio_var_required": str(hrv),
        "justification_liveness_missing": liveness,
        "churn": {str(e): {k: str(v) for k, v in x.items()} for e, x in churn.items()},
        "churn_ok": churn_ok,
        "rate_bounds_violated": rates_bad,
        "premises": premises,
        "clean": window_ok and lam_ok and beta < THIRD and not liveness and churn_ok,
    }


# latency --------------------------------------------------------------------

def _percentile(xs, q):
    if not xs:
        return None
    xs = sorted(xs)
    k = max(0, min(len(xs) - 1, int(round(q * (len(xs) - 1)))))
    return xs[k]


def latency_table(data: TraceData, observer=None) -> dict:
    """Per canonical block: slots until each rule confirms it and until it is finalized."""
    store = data.store
    obs_ids = sorted({c[2] for c in data.confirms})
    if not obs_ids:
        return {"observer": None, "rows": [], "aggregate": {}}
    obs = obs_ids[0] if observer is None else observer
    recs = [(p["slot"], p) for _, _, o, p in data.confirms if o == obs]
    rules = sorted({p["rule"] for _, p in recs})
    final = [h for h in data.heads if h[2] == obs]
    head = final[-1][3]
    chain = store.chain(head)[1:]
    fin = sorted((slot, gf.block) for (o, slot), (gj, gf) in data.checkpoints.items() if o == obs)
    rows = []
    for b in chain:
        bs = store.slot(b)
        row = {"block": b, "slot": bs}
        for r in rules:
            hit = next((s for s, p in recs if p["rule"] == r and s > bs and p["tip"] is not None
                        and data.anc(b, p["tip"])), None)
            row[r] = None if hit is None else hit - bs
        fs = next((s for s, g in fin if s > bs and data.anc(b, g)), None)
        row["finalization"] = None if fs is None else fs - bs
        rows.append(row)
    agg = {}
    for k in rules + ["finalization"]:
        xs = [row[k] for row in rows if row[k] is not None]
        agg[k] = {"count": len(xs), "unconfirmed": len(rows) - len(xs),
                  "p50": _percentile(xs, 0.5), "p90": _percentile(xs, 0.9), "max": max(xs, default=None),
                  "p50_seconds": None if not xs else _percentile(xs, 0.5) * SECONDS_PER_SLOT}
    return {"observer": obs, "seconds_per_slot": SECONDS_PER_SLOT, "rows": rows, "aggregate": agg}


# replay evidence ------------------------------------------------------------

def raw_flips(data: TraceData) -> list:
    """Observer/label pairs where the raw LMD safety condition went true then false."""
    out = []
    last = {}
    for off, tick, obs, p in data.raw:
        key = (obs, p["label"])
        prev = last.get(key)
        if prev is not None and prev[1]["safe"] and not p["safe"]:
            out.append({"observer": obs, "label": p["label"], "true_slot": prev[1]["slot"],
                        "false_slot": p["slot"], "offset": off,
                        "confirmed_lmd_after": p.get("confirmed_lmd")})
        last[key] = (off, p)
    return out


# report ---------------------------------------------------------------------

def monitor_report(trace: Trace, rules=None, strict=False) -> dict:
    data = TraceData(trace)
    rules = list(rules or data.cfg.rules)
    audit = audit_assumptions(data)
    safety, mono = {}, {}
    for r in rules:
        prem = audit["premises"][r]
        safety[r] = check_safety(data, r, void=not prem["safety"] and not strict)
        mono[r] = check_monotonicity(data, r, void=not prem["monotonicity"] and not strict)
    gasper = gasper_properties(data)
    gasper_applies = Fraction(audit["realized_window_beta"]) < THIRD
    ok = all(f["pass"] for f in safety.values()) and all(f["pass"] for f in mono.values())
    if gasper_applies:
        ok = ok and all(g["pass"] for g in gasper.values())
    return {
        "scenario": data.cfg.name,
        "seed": data.cfg.seed,
        "ggst": data.ggst,
        "safety": safety,
        "monotonicity": mono,
        "gasper": gasper,
        "gasper_applies": gasper_applies,
        "audit": audit,
        "latency": latency_table(data),
        "raw_flips": raw_flips(data),
        "gj_weight": [p for _, _, _, p in data.gj_checks],
        "pass": ok,
    }


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1, default=to_json_number)


SUMMARY_FIELDS = ["scenario", "seed", "block", "slot", "rule", "latency_slots", "latency_seconds",
                  "finalization_slots", "finalization_seconds", "safety", "monotonicity"]


def summary_rows(report: dict) -> list:
    rows = []
    lat = report["latency"]
    for row in lat["rows"]:
        for r in report["safety"]:
            x = row.get(r)
            f = row["finalization"]
            rows.append({
                "scenario": report["scenario"], "seed": report["seed"], "block": row["block"],
                "slot": row["slot"], "rule": r,
                "latency_slots": "" if x is None else x,
                "latency_seconds": "" if x is None else x * SECONDS_PER_SLOT,
                "finalization_slots": "" if f is None else f,
                "finalization_seconds": "" if f is None else f * SECONDS_PER_SLOT,
                "safety": "pass" if report["safety"][r]["pass"] else "fail",
                "monotonicity": "pass" if report["monotonicity"][r]["pass"] else "fail",
            })
    return rows


def summary_csv(rows, fields=SUMMARY_FIELDS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()

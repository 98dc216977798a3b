"""Deterministic discrete-event simulation of validators on a partially synchronous network."""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field, fields
from fractions import Fraction

from .chain import Balances, BlockStore, CommitteeSchedule, TimeConfig, genesis_block, make_block, to_json_number
from .confirmation import RULES, Observer, SafetyParams, is_lmd_ghost_safe, rates_admissible
from .ffg import FfgVote, checkpoint_of, justification, view_checkpoints, voting_source
from .forkchoice import BoostState, GhostVote, View, lmd_ghost_hfc


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _fraction(x):
    if x is None:
        return None
    return Fraction(str(x)) if isinstance(x, float) else Fraction(x)


CHURN_KINDS = ("enter", "exit", "reward", "penalty")


@dataclass(frozen=True)
class ChurnEntry:
    epoch: int
    kind: str
    validator: int
    amount: Fraction = Fraction(0)

    def to_json(self):
        return {"epoch": self.epoch, "kind": self.kind, "validator": self.validator, "amount": str(self.amount)}


def churn_step(balances: Balances, entry: ChurnEntry, base=None) -> Balances:
    """Apply one entry/exit/reward/penalty to a balance assignment."""
    v = entry.validator
    old = balances[v]
    if entry.kind == "enter":
        w = entry.amount if entry.amount else (base[v] if base is not None else 1)
        return balances.updated([(v, w)])
    if entry.kind == "exit":
        return balances.updated([(v, 0)])
    if entry.kind == "reward":
        return balances.updated([(v, old * (1 + entry.amount))])
    if entry.kind == "penalty":
        return balances.updated([(v, old * (1 - entry.amount))])
    raise ValueError(f"unknown churn kind {entry.kind!r}")


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    num_validators: int = 16
    weights: list | None = None
    slots_per_epoch: int = 32
    ticks_per_slot: int = 12
    vote_offset: int | None = None
    delta: int = 2
    gst: int = 0
    horizon_slots: int = 64
    seed: int = 0
    adversary: list = field(default_factory=list)
    strategy: dict = field(default_factory=lambda: {"kind": "none"})
    rules: list = field(default_factory=lambda: list(RULES))
    params: SafetyParams = field(default_factory=SafetyParams)
    churn: list = field(default_factory=list)
    committee_mode: str = "shuffle"
    observers: list | None = None
    num_observers: int = 2
    subtree_boost: bool = False
    slash_penalty: Fraction = Fraction(1)
    trace_deliveries: bool = True
    track: list = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.params, dict):
            self.params = SafetyParams(**{k: _fraction(v) if k not in ("max_lookahead",) else v
                                          for k, v in self.params.items()})
        self.slash_penalty = _fraction(self.slash_penalty)
        self.churn = [c if isinstance(c, ChurnEntry) else ChurnEntry(c["epoch"], c["kind"], c["validator"],
                                                                      _fraction(c.get("amount", 0)))
                      for c in self.churn]
        if self.weights is not None:
            self.weights = [_fraction(w) if not isinstance(w, int) else w for w in self.weights]

    @property
    def time(self) -> TimeConfig:
        return TimeConfig(self.slots_per_epoch, self.ticks_per_slot, self.vote_offset)

    def validate(self):
        problems = []
        if self.slots_per_epoch < 2:
            problems.append("slots_per_epoch: must be >= 2")
        offset = self.vote_offset if self.vote_offset is not None else self.ticks_per_slot // 3
        if not 0 < offset < self.ticks_per_slot:
            problems.append("vote_offset: must lie strictly inside a slot")
        if not 0 <= self.delta < self.ticks_per_slot - offset:
            problems.append("delta: must satisfy 0 <= delta < ticks_per_slot - vote_offset")
        if self.num_validators < 1:
            problems.append("num_validators: must be positive")
        if self.weights is not None and len(self.weights) != self.num_validators:
            problems.append("weights: length must equal num_validators")
        if self.weights is not None and any(w < 0 for w in self.weights):
            problems.append("weights: must be non-negative")
        bad = [v for v in self.adversary if not 0 <= v < self.num_validators]
        if bad:
            problems.append(f"adversary: unknown validators {bad}")
        if len(set(self.adversary)) >= self.num_validators:
            problems.append("adversary: at least one honest validator is required")
        if self.gst < 0:
            problems.append("gst: must be non-negative")
        if self.horizon_slots < 1:
            problems.append("horizon_slots: must be positive")
        unknown = [r for r in self.rules if r not in RULES]
        if unknown:
            problems.append(f"rules: unknown {unknown}")
        if self.committee_mode not in ("shuffle", "fixed"):
            problems.append("committee_mode: must be 'shuffle' or 'fixed'")
        if not 0 <= self.slash_penalty <= 1:
            problems.append("slash_penalty: must lie in [0, 1]")
        for c in self.churn:
            if c.kind not in CHURN_KINDS:
                problems.append(f"churn: unknown kind {c.kind!r}")
            elif not 0 <= c.validator < self.num_validators:
                problems.append(f"churn: unknown validator {c.validator}")
        if not problems and self.churn:
            problems.extend(self._churn_rate_problems())
        if self.strategy.get("kind", "none") not in STRATEGY_KINDS:
            problems.append(f"strategy: unknown kind {self.strategy.get('kind')!r}")
        if problems:
            raise ConfigError(problems)
        return self

    def _churn_rate_problems(self):
        p = self.params
        out = []
        bal = Balances(self.initial_weights())
        for e in sorted({c.epoch for c in self.churn}):
            total = bal.total
            exits = sum(bal[c.validator] for c in self.churn if c.epoch == e and c.kind == "exit")
            if exits > p.exit_rate * total:
                out.append(f"churn: epoch {e} exits exceed exit_rate")
            for c in self.churn:
                if c.epoch != e:
                    continue
                if c.kind == "reward" and c.amount > p.reward_rate:
                    out.append(f"churn: epoch {e} reward exceeds reward_rate")
                if c.kind == "penalty" and c.amount > p.penalty_rate:
                    out.append(f"churn: epoch {e} penalty exceeds penalty_rate")
                bal = churn_step(bal, c, self.base_weights())
        return out

    def base_weights(self):
        if self.weights is None:
            return {v: 1 for v in range(self.num_validators)}
        return {v: w for v, w in enumerate(self.weights)}

    def initial_weights(self):
        w = self.base_weights()
        entering = {c.validator for c in self.churn if c.kind == "enter"}
        return {v: (0 if v in entering else x) for v, x in w.items()}

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            x = getattr(self, f.name)
            if f.name == "params":
                x = x.to_json()
            elif f.name == "churn":
                x = [c.to_json() for c in x]
            elif f.name == "weights" and x is not None:
                x = [to_json_number(w) for w in x]
            elif isinstance(x, Fraction):
                x = str(x)
            out[f.name] = x
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ScenarioConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError([f"{k}: unknown field" for k in unknown])
        try:
            return cls(**data)
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError([str(exc)]) from exc


class Trace:
    """Totally ordered event log; payloads are JSON-native values."""

    def __init__(self, events=None):
        self.events = events if events is not None else []

    def add(self, tick, kind, actor, payload):
        self.events.append((tick, kind, actor, payload))

    def of_kind(self, *kinds):
        return [e for e in self.events if e[1] in kinds]

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"tick": t, "kind": k, "actor": a, "payload": p}, sort_keys=True, separators=(",", ":")) + "\n"
            for t, k, a, p in self.events
        )

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        evs = []
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                evs.append((d["tick"], d["kind"], d["actor"], d["payload"]))
        return cls(evs)

    @classmethod
    def read(cls, path) -> "Trace":
        with open(path) as fh:
            return cls.from_jsonl(fh.read())

    @property
    def scenario(self) -> dict:
        for t, k, a, p in self.events:
            if k == "scenario":
                return p
        raise KeyError("trace has no scenario header")


def msg_json(kind, msg):
    if kind == "block":
        return ["block", msg]
    return [kind, msg.to_json()]


# event priorities at equal ticks
P_DELIVER, P_SLOT, P_EVAL, P_VOTE, P_ADV = 0, 1, 2, 3, 4


class Simulation:
    def __init__(self, cfg: ScenarioConfig, strategy=None):
        cfg.validate()
        self.cfg = cfg
        self.time = time = cfg.time
        self.params = cfg.params
        ids = list(range(cfg.num_validators))
        self.base = cfg.base_weights()
        self.genesis_weights = cfg.initial_weights()
        self._active = {}
        self.schedule = CommitteeSchedule(tuple(ids), time.slots_per_epoch, cfg.seed, cfg.committee_mode,
                                          self.active_validators if cfg.churn else None)
        self.store = BlockStore(genesis_block(), Balances(self.genesis_weights), time, self.schedule)
        self.byz = frozenset(cfg.adversary)
        self.honest = [v for v in ids if v not in self.byz]
        self.views = {v: View(self.store) for v in self.honest}
        self.adv_view = View(self.store)
        self.boost = {v: None for v in self.honest}
        if cfg.observers is not None:
            obs = [v for v in cfg.observers if v not in self.byz]
        else:
            obs = self.honest[: cfg.num_observers]
        self.observers = {v: Observer(self.store, self.schedule, self.params, cfg.rules) for v in obs}
        self.rng = random.Random(f"network:{cfg.seed}")
        self.queue = []
        self.seq = 0
        self.trace = Trace()
        self.pending = {}
        self.byz_msgs = set()
        self.held = {v: [] for v in self.honest}
        self.orphans = {v: {} for v in self.honest}
        self.labels = {}
        self.relay_max = set()
        self.now = 0
        self.strategy = strategy if strategy is not None else make_strategy(cfg.strategy)
        self.trace.add(0, "scenario", -1, cfg.to_json())
        self.trace.add(0, "block", -1, self.store.get(self.store.genesis).to_json())
        for e in range(time.epoch_of(max(cfg.horizon_slots - 1, 0)) + 1):
            comms = self.schedule.committees(e)
            self.trace.add(time.slot_start(time.first_slot(e)), "committees", -1,
                           {"epoch": e, "committees": [list(c) for c in comms],
                            "proposers": [self.schedule.proposer(s) for s in
                                          range(time.first_slot(e), time.last_slot(e) + 1)]})

    # churn -----------------------------------------------------------------
    def churn_balances(self, epoch: int) -> Balances:
        bal = Balances(self.genesis_weights)
        for c in sorted(self.cfg.churn, key=lambda c: (c.epoch, c.validator, c.kind)):
            if c.epoch <= epoch:
                bal = churn_step(bal, c, self.base)
        return bal

    def active_validators(self, epoch: int):
        hit = self._active.get(epoch)
        if hit is None:
            hit = tuple(sorted(self.churn_balances(epoch).validators()))
            self._active[epoch] = hit
        return hit

    # queue -----------------------------------------------------------------
    def push(self, tick, prio, kind, data):
        self.seq += 1
        heapq.heappush(self.queue, (tick, prio, self.seq, kind, data))

    def run(self) -> Trace:
        cfg, time = self.cfg, self.time
        self.strategy.setup(self)
        self.push(time.slot_start(0), P_SLOT, "slot", 0)
        end = time.slot_start(cfg.horizon_slots)
        self.push(end, P_EVAL, "eval", cfg.horizon_slots)
        while self.queue:
            tick, prio, _, kind, data = heapq.heappop(self.queue)
            if tick > end:
                break
            self.now = tick
            if kind == "deliver":
                self._deliver(tick, *data)
            elif kind == "slot":
                self._slot_start(tick, data)
            elif kind == "eval":
                self._evaluate(tick, data)
            elif kind == "vote":
                self._vote(tick, data)
            elif kind == "adv":
                self.strategy.on_action(self, tick, data)
        self.trace.add(end, "end", -1, {"horizon_slots": cfg.horizon_slots})
        return self.trace

    # network ---------------------------------------------------------------
    def delivery_bound(self, tick):
        return max(tick, self.cfg.gst) + self.cfg.delta

    def sample_delay(self, tick):
        # uniform over [tick, bound]; random() is much cheaper than randint
        return tick + int(self.rng.random() * (self.delivery_bound(tick) - tick + 1))

    def send(self, sender, kind, msg, tick, recipients=None, at=None):
        """Send to honest recipients; at maps recipient -> pinned delivery tick."""
        key = (kind, msg)
        if sender in self.byz or sender < 0:
            self.byz_msgs.add(key)
        self._adv_add(kind, msg, tick)
        if sender in self.views:
            self._accept(sender, kind, msg, tick)
        targets = self.honest if recipients is None else [r for r in recipients if r in self.views]
        for r in targets:
            if r == sender:
                continue
            when = None
            if at is not None:
                when = at.get(r)
            if when is None and sender not in self.byz:
                when = self.strategy.network_delay(self, kind, msg, sender, r, tick)
                if when is not None:
                    when = min(max(when, tick), self.delivery_bound(tick))
            if when is None:
                when = self.sample_delay(tick)
            self._schedule_delivery(r, kind, msg, when)

    def _schedule_delivery(self, r, kind, msg, when):
        pk = (kind, msg, r)
        old = self.pending.get(pk)
        if old is not None and old <= when:
            return
        self.pending[pk] = when
        self.push(when, P_DELIVER, "deliver", (r, kind, msg))

    def _adv_add(self, kind, msg, tick):
        v = self.adv_view
        if kind == "block":
            if msg not in v.blocks:
                v.add_block(msg, tick)
        elif kind == "ghost":
            v.add_ghost_vote(msg, tick)
        else:
            v.add_ffg_vote(msg, tick)

    def _deliver(self, tick, r, kind, msg):
        view = self.views[r]
        if view.has(kind, msg):
            return
        if self.pending.get((kind, msg, r)) != tick:
            return
        if self.cfg.trace_deliveries:
            self.trace.add(tick, "deliver", r, {"msg": msg_json(kind, msg)})
        self._accept(r, kind, msg, tick)
        if (kind, msg) in self.byz_msgs:
            self._relay(r, kind, msg, tick)

    def _relay(self, r, kind, msg, tick):
        # honest gossip bounds delivery of adversarial messages once any honest node holds them
        mark = ("relayed", kind, msg)
        if mark in self.pending:
            return
        self.pending[mark] = tick
        bound = self.delivery_bound(tick)
        pin = ((kind, msg) in self.relay_max)
        for w in self.honest:
            if w == r or self.views[w].has(kind, msg):
                continue
            old = self.pending.get((kind, msg, w))
            if old is None or old > bound:
                when = self.strategy.network_delay(self, kind, msg, r, w, tick)
                if when is None:
                    when = bound if pin else self.sample_delay(tick)
                self._schedule_delivery(w, kind, msg, min(max(when, tick), bound))

    def _accept(self, r, kind, msg, tick):
        view = self.views[r]
        if kind == "block":
            blk = self.store.get(msg)
            if blk.parent not in view.blocks:
                self.orphans[r].setdefault(blk.parent, []).append(msg)
                return
            if blk.slot > self.time.slot_at(tick):
                self.held[r].append(msg)
                return
            self._add_block(r, msg, tick)
        elif kind == "ghost":
            view.add_ghost_vote(msg, tick)
        else:
            view.add_ffg_vote(msg, tick)

    def _add_block(self, r, bid, tick):
        view = self.views[r]
        if bid in view.blocks:
            return
        view.add_block(bid, tick)
        blk = self.store.get(bid)
        s = self.time.slot_at(tick)
        if blk.slot == s and tick < self.time.vote_tick(s) and self.boost[r] is None:
            self.boost[r] = bid
        for child in self.orphans[r].pop(bid, []):
            self._accept(r, "block", child, tick)

    # protocol --------------------------------------------------------------
    def boost_state(self, v):
        return BoostState(self.boost.get(v), self.params.proposer_score, self.time.slots_per_epoch,
                          self.cfg.subtree_boost)

    def head(self, v, tick):
        return lmd_ghost_hfc(self.store, self.views[v], tick, self.schedule, self.boost_state(v))

    def adv_head(self, tick):
        return lmd_ghost_hfc(self.store, self.adv_view, tick, self.schedule,
                             BoostState(None, self.params.proposer_score, self.time.slots_per_epoch))

    def block_content(self, view: View, parent: str, slot: int):
        """FFG votes and slashing evidence an honest proposer would include on top of parent."""
        store = self.store
        js = justification(store, parent)
        epoch = self.time.epoch_of(slot)
        votes = []
        for vote in view.ffg_votes:
            tgt = vote.target
            if tgt.epoch > epoch or tgt.block not in store:
                continue
            if not store.is_ancestor(tgt.block, parent):
                continue
            if store.boundary_block(parent, tgt.epoch) != tgt.block:
                continue
            if vote.signer in js.links.get((vote.source, tgt), ()):
                continue
            votes.append(vote)
        slashings = [v for v in sorted(view.evidence) if v not in js.slashed]
        return votes, slashings

    def eba_delta(self, parent: str, slot: int, slashings):
        store = self.store
        old = store.eba(parent)
        new = old
        pe, e = store.epoch(parent), self.time.epoch_of(slot)
        if self.cfg.churn and e > pe:
            for c in sorted(self.cfg.churn, key=lambda c: (c.epoch, c.validator, c.kind)):
                if pe < c.epoch <= e and c.validator not in justification(store, parent).slashed:
                    new = churn_step(new, c, self.base)
        for v in slashings:
            new = new.updated([(v, new[v] * (1 - self.cfg.slash_penalty))])
        delta = []
        for v in sorted(set(x for x, _ in old.items()) | set(x for x, _ in new.items())):
            if old[v] != new[v]:
                delta.append((v, new[v]))
        return delta

    def build_block(self, proposer, parent, slot, view=None, tag="", include=True):
        view = self.adv_view if view is None else view
        votes, slashings = self.block_content(view, parent, slot) if include else ([], [])
        delta = self.eba_delta(parent, slot, slashings)
        blk = make_block(slot, proposer, parent, votes, slashings, delta, tag)
        if blk.id not in self.store:
            self.store.add(blk)
            self.trace.add(self.now, "block", proposer, blk.to_json())
            js = justification(self.store, blk.id)
            self.trace.add(self.now, "justification", -1, {
                "block": blk.id, "gu": js.gu.to_json(), "gj": js.gj.to_json(), "gf": js.gf.to_json(),
                "unrealized": sorted(c.to_json() for c in js.unrealized),
                "slashed": sorted(js.slashed)})
        return blk.id

    def honest_votes(self, v, slot, head):
        e = self.time.epoch_of(slot)
        g = GhostVote(v, slot, head)
        f = FfgVote(v, voting_source(self.store, head, e), checkpoint_of(self.store, head, e), slot)
        return g, f

    def cast(self, v, g, f, tick, recipients=None, at=None):
        if g is not None:
            self.trace.add(tick, "ghost_vote", v, {"vote": g.to_json()})
            self.send(v, "ghost", g, tick, recipients, at)
        if f is not None:
            self.trace.add(tick, "ffg_vote", v, {"vote": f.to_json()})
            self.send(v, "ffg", f, tick, recipients, at)

    def _slot_start(self, tick, s):
        time, cfg = self.time, self.cfg
        for v in self.honest:
            self.boost[v] = None
            if self.held[v]:
                ready = [b for b in self.held[v] if self.store.slot(b) <= s]
                self.held[v] = [b for b in self.held[v] if self.store.slot(b) > s]
                for b in sorted(ready, key=self.store.order_key):
                    self._accept(v, "block", b, tick)
        if s > 0:
            p = self.schedule.proposer(s)
            if p in self.views:
                parent = self.head(p, tick)
                bid = self.build_block(p, parent, s, self.views[p])
                self.send(p, "block", bid, tick)
            elif p in self.byz:
                self.strategy.propose(self, s, p, tick)
        self.strategy.on_slot_start(self, s, tick)
        self.push(tick, P_EVAL, "eval", s)
        self.push(time.vote_tick(s), P_VOTE, "vote", s)
        if s + 1 < cfg.horizon_slots:
            self.push(time.slot_start(s + 1), P_SLOT, "slot", s + 1)

    def _sample_heads(self, tick, s, point):
        for v in self.honest:
            self.trace.add(tick, "head", v, {"slot": s, "at": point, "head": self.head(v, tick)})

    def _evaluate(self, tick, s):
        self._sample_heads(tick, s, "start")
        if s == 0:
            return
        for o, obs in self.observers.items():
            view = self.views[o]
            head = self.head(o, tick)
            res = obs.evaluate(view, tick, head)
            gj, gf = res["_gj"], res["_gf"]
            self.trace.add(tick, "checkpoints", o, {"slot": s, "gj": gj.to_json(), "gf": gf.to_json(),
                                                    "gj_total": to_json_number(self.store.eba(gj.block).total)})
            for r in obs.rules:
                self.trace.add(tick, "confirm", o, {"rule": r, "slot": s, "passed": res[r]["passed"],
                                                     "tip": res[r]["tip"], "gf": gf.block})
            for label in self.cfg.track:
                bid = self.labels.get(label)
                if bid is None or bid not in view.blocks:
                    continue
                safe = is_lmd_ghost_safe(self.store, view, tick, bid, gj, self.params, self.schedule)
                self.trace.add(tick, "raw_safe", o, {"label": label, "block": bid, "slot": s, "safe": safe,
                                                      "confirmed_lmd": obs.is_confirmed("lmd", bid, tick)
                                                      if "lmd" in obs.rules else None})
        self.strategy.after_evaluate(self, s, tick)

    def _vote(self, tick, s):
        committee = self.schedule.committee(s)
        for v in committee:
            if v in self.views:
                head = self.head(v, tick)
                g, f = self.honest_votes(v, s, head)
                self.cast(v, g, f, tick)
        members = [v for v in committee if v in self.byz]
        self.strategy.vote(self, s, members, tick)
        self._sample_heads(tick, s, "vote")


def run_scenario(cfg: ScenarioConfig, strategy=None) -> tuple:
    """Run one scenario; returns (trace, simulation)."""
    sim = Simulation(cfg, strategy)
    trace = sim.run()
    return trace, sim


from .adversary import STRATEGY_KINDS, make_strategy  # noqa: E402

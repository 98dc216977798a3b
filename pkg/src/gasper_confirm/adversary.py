"""Byzantine strategies driving the adversarial validators of a simulation."""

from __future__ import annotations

import math

from .ffg import Checkpoint, FfgVote, checkpoint_of, voting_source
from .forkchoice import GhostVote


class Strategy:
    """Default: Byzantine validators follow the protocol on the adversary's omniscient view."""

    kind = "none"

    def __init__(self, **params):
        self.params = params

    def setup(self, sim):
        pass

    def on_slot_start(self, sim, slot, tick):
        pass

    def after_evaluate(self, sim, slot, tick):
        pass

    def on_action(self, sim, tick, action):
        pass

    def network_delay(self, sim, kind, msg, sender, receiver, tick):
        return None

    def propose(self, sim, slot, proposer, tick):
        self.honest_propose(sim, slot, proposer, tick)

    def vote(self, sim, slot, members, tick):
        for v in members:
            self.honest_vote(sim, slot, v, tick)

    # helpers ---------------------------------------------------------------
    def honest_propose(self, sim, slot, proposer, tick, recipients=None, at=None):
        parent = sim.adv_head(tick)
        bid = sim.build_block(proposer, parent, slot)
        sim.send(proposer, "block", bid, tick, recipients, at)
        return bid

    def honest_vote(self, sim, slot, v, tick, recipients=None, at=None):
        head = sim.adv_head(tick)
        g, f = sim.honest_votes(v, slot, head)
        sim.cast(v, g, f, tick, recipients, at)


def halves(sim):
    return sim.honest[0::2], sim.honest[1::2]


def _fork_parent(sim, head):
    p = sim.store.parent(head)
    return head if p is None else p


class Silent(Strategy):
    kind = "silent"

    def setup(self, sim):
        frac = float(self.params.get("fraction", 1))
        byz = sorted(sim.byz)
        self.silent = set(byz[: math.ceil(frac * len(byz))])

    def propose(self, sim, slot, proposer, tick):
        if proposer not in self.silent:
            self.honest_propose(sim, slot, proposer, tick)

    def vote(self, sim, slot, members, tick):
        for v in members:
            if v not in self.silent:
                self.honest_vote(sim, slot, v, tick)


class Equivocate(Strategy):
    """Double proposals and split GHOST votes across two halves of the honest set."""

    kind = "equivocate"

    def propose(self, sim, slot, proposer, tick):
        a, b = halves(sim)
        parent = sim.adv_head(tick)
        x = sim.build_block(proposer, parent, slot, tag="a")
        y = sim.build_block(proposer, parent, slot, tag="b")
        sim.send(proposer, "block", x, tick, a)
        sim.send(proposer, "block", y, tick, b)

    def vote(self, sim, slot, members, tick):
        a, b = halves(sim)
        store = sim.store
        head = sim.adv_head(tick)
        alt = None
        for leaf in sim.adv_view.leaves():
            if store.slot(leaf) <= slot and not store.is_ancestor(leaf, head) and \
                    (alt is None or store.order_key(leaf) > store.order_key(alt)):
                alt = leaf
        if alt is None and store.parent(head) is not None:
            alt = store.parent(head)
        e = sim.time.epoch_of(slot)
        for v in members:
            f = FfgVote(v, voting_source(store, head, e), checkpoint_of(store, head, e), slot)
            sim.cast(v, GhostVote(v, slot, head), f, tick, a)
            other = GhostVote(v, slot, alt if alt is not None else head)
            if alt is not None:
                sim.trace.add(tick, "ghost_vote", v, {"vote": other.to_json()})
            sim.send(v, "ghost", other, tick, b)
            sim.send(v, "ffg", f, tick, b)


class WithholdRelease(Strategy):
    """Build a private fork and publish it just before a later vote deadline."""

    kind = "withhold"

    def setup(self, sim):
        self.depth = int(self.params.get("depth", 2))
        self.tip = None
        self.start = None
        self.withheld = []

    def propose(self, sim, slot, proposer, tick):
        if self.tip is None:
            parent = _fork_parent(sim, sim.adv_head(tick))
            self.start = slot
        else:
            parent = self.tip
        bid = sim.build_block(proposer, parent, slot, tag="private")
        self.tip = bid
        self.withheld.append((proposer, "block", bid))

    def vote(self, sim, slot, members, tick):
        if self.tip is None:
            return super().vote(sim, slot, members, tick)
        store, e = sim.store, sim.time.epoch_of(slot)
        for v in members:
            g = GhostVote(v, slot, self.tip)
            sim.trace.add(tick, "ghost_vote", v, {"vote": g.to_json(), "withheld": True})
            self.withheld.append((v, "ghost", g))
            if store.epoch(self.tip) <= e:
                f = FfgVote(v, voting_source(store, self.tip, e), checkpoint_of(store, self.tip, e), slot)
                sim.trace.add(tick, "ffg_vote", v, {"vote": f.to_json(), "withheld": True})
                self.withheld.append((v, "ffg", f))

    def on_slot_start(self, sim, slot, tick):
        if self.tip is not None and slot >= self.start + self.depth:
            sim.push(sim.time.vote_tick(slot) - 1, 4, "adv", {"action": "release"})

    def on_action(self, sim, tick, action):
        if action.get("action") != "release" or self.tip is None:
            return
        for sender, kind, msg in self.withheld:
            sim.send(sender, kind, msg, tick)
        sim.trace.add(tick, "release", -1, {"tip": self.tip, "messages": len(self.withheld)})
        self.withheld = []
        self.tip = None


class ConflictingFfg(Strategy):
    """FFG votes for a rival fork's checkpoint; with double=True also sign the honest target."""

    kind = "conflicting_ffg"

    def setup(self, sim):
        d = self.params.get("double", False)
        self.double = (sim.cfg.seed % 2 == 1) if d == "auto" else bool(d)
        self.forks = []

    def propose(self, sim, slot, proposer, tick):
        parent = _fork_parent(sim, sim.adv_head(tick))
        bid = sim.build_block(proposer, parent, slot, tag="rival")
        self.forks.append(bid)
        sim.send(proposer, "block", bid, tick)

    def vote(self, sim, slot, members, tick):
        store = sim.store
        head = sim.adv_head(tick)
        rivals = [b for b in self.forks if store.slot(b) <= slot and not store.is_ancestor(b, head)]
        if not rivals:
            return super().vote(sim, slot, members, tick)
        alt = max(rivals, key=store.order_key)
        e = sim.time.epoch_of(slot)
        for v in members:
            f = FfgVote(v, voting_source(store, alt, e), checkpoint_of(store, alt, e), slot)
            sim.cast(v, GhostVote(v, slot, alt), f, tick)
            if self.double:
                h = FfgVote(v, voting_source(store, head, e), checkpoint_of(store, head, e), slot)
                if h != f:
                    sim.cast(v, None, h, tick)


class Scripted(Strategy):
    """Replays an explicit action list; unscripted duties follow the protocol.

    Parameters: actions (list of dicts with a tick), groups (name -> ids),
    partition {"groups": [names], "from", "until"}, skip_propose (slots),
    skip_vote ([slot, signer] pairs), byz_group (group name Byzantine
    traffic is routed as under the partition), fast (pin unpartitioned
    delays to zero), checks (evidence records emitted after evaluations).
    """

    kind = "scripted"

    def setup(self, sim):
        p = self.params
        self.groups = {k: list(v) for k, v in p.get("groups", {}).items()}
        self.partition = p.get("partition")
        self.skip_propose = set(p.get("skip_propose", ()))
        self.skip_vote = {tuple(x) for x in p.get("skip_vote", ())}
        self.byz_group = p.get("byz_group")
        self._group_of = {}
        if self.partition:
            for name in self.partition["groups"]:
                for v in self.groups[name]:
                    self._group_of[v] = name
            if self.byz_group is not None:
                for v in sim.byz:
                    self._group_of.setdefault(v, self.byz_group)
        for i, act in enumerate(p.get("actions", ())):
            sim.push(act["tick"], 4, "adv", dict(act, _index=i))

    # routing ---------------------------------------------------------------
    def network_delay(self, sim, kind, msg, sender, receiver, tick):
        part = self.partition
        if part and part["from"] <= tick < part["until"]:
            a, b = self._group_of.get(sender), self._group_of.get(receiver)
            if a is not None and b is not None and a != b:
                return part["until"]
        # "fast": every other delay pinned to zero
        return tick if self.params.get("fast") else None

    def _partition_at(self, sim, sender, tick):
        at = {}
        for r in sim.honest:
            d = self.network_delay(sim, None, None, sender, r, tick)
            if d is not None:
                at[r] = d
        return at or None

    def propose(self, sim, slot, proposer, tick):
        if slot not in self.skip_propose:
            self.honest_propose(sim, slot, proposer, tick, at=self._partition_at(sim, proposer, tick))

    def vote(self, sim, slot, members, tick):
        for v in members:
            if (slot, v) not in self.skip_vote:
                self.honest_vote(sim, slot, v, tick, at=self._partition_at(sim, v, tick))

    # references ------------------------------------------------------------
    def resolve(self, sim, ref, tick):
        if ref == "genesis":
            return sim.store.genesis
        if ref == "head":
            return sim.adv_head(tick)
        kind, _, arg = ref.partition(":")
        if kind == "label":
            return sim.labels[arg]
        if kind == "head_of":
            return sim.head(int(arg), tick)
        if kind == "parent":
            return sim.store.parent(self.resolve(sim, arg, tick))
        if kind == "slot":
            hits = [b for b, blk in sim.store.blocks.items() if blk.slot == int(arg)]
            return min(hits, key=sim.store.order_key)
        raise ValueError(f"unknown block reference {ref!r}")

    def recipients(self, sim, spec):
        if spec is None or spec == "honest":
            return list(sim.honest)
        if spec == "none":
            return []
        if isinstance(spec, str) and spec.startswith("group:"):
            return list(self.groups[spec[6:]])
        if isinstance(spec, str) and spec.startswith("except:"):
            drop = set(self.groups[spec[7:]])
            return [v for v in sim.honest if v not in drop]
        return list(spec)

    def _deliver_at(self, sim, act, tick):
        at = act.get("at")
        if at is None:
            return None
        when = tick if at == "now" else at
        return {r: when for r in self.recipients(sim, act.get("to"))}

    def _checkpoint(self, sim, spec, tick, slot):
        if isinstance(spec, dict):
            return Checkpoint(self.resolve(sim, spec["block"], tick), spec["epoch"])
        raise ValueError(f"bad checkpoint spec {spec!r}")

    def after_evaluate(self, sim, slot, tick):
        for chk in self.params.get("checks", ()):
            if chk["slot"] == slot and chk["kind"] == "gj_weight":
                sim.trace.add(tick, "gj_weight", -1, gj_weight_evidence(sim, tick, chk["observers"]))

    def on_action(self, sim, tick, act):
        kind = act["action"]
        to = self.recipients(sim, act.get("to"))
        at = self._deliver_at(sim, act, tick)
        if kind == "propose":
            slot = act["slot"]
            proposer = sim.schedule.proposer(slot)
            parent = self.resolve(sim, act.get("parent", "head"), tick)
            bid = sim.build_block(proposer, parent, slot, tag=act.get("label", ""),
                                  include=act.get("include", True))
            if act.get("label"):
                sim.labels[act["label"]] = bid
            if act.get("relay") == "max":
                sim.relay_max.add(("block", bid))
            if to:
                sim.send(proposer, "block", bid, tick, to, at)
            else:
                sim.adv_view.add_block(bid, tick)
        elif kind == "release":
            bid = sim.labels[act["label"]]
            if act.get("relay") == "max":
                sim.relay_max.add(("block", bid))
            sim.send(sim.store.get(bid).proposer, "block", bid, tick, to, at)
        elif kind == "ghost":
            block = self.resolve(sim, act["block"], tick)
            for v in act["signers"]:
                sim.cast(v, GhostVote(v, act["slot"], block), None, tick, to, at)
        elif kind == "ffg":
            slot = act["slot"]
            for v in act["signers"]:
                if act.get("target") == "auto":
                    b = self.resolve(sim, act["block"], tick)
                    e = sim.time.epoch_of(slot)
                    f = FfgVote(v, voting_source(sim.store, b, e), checkpoint_of(sim.store, b, e), slot)
                else:
                    f = FfgVote(v, self._checkpoint(sim, act["source"], tick, slot),
                                self._checkpoint(sim, act["target"], tick, slot), slot)
                sim.cast(v, None, f, tick, to, at)
        elif kind == "label":
            sim.labels[act["label"]] = self.resolve(sim, act["block"], tick)
            sim.trace.add(tick, "label", -1, {"label": act["label"], "block": sim.labels[act["label"]]})
        else:
            raise ValueError(f"unknown scripted action {kind!r}")


def gj_weight_evidence(sim, tick, observers) -> dict:
    """Compare two observers' greatest-justified checkpoints and the LMD thresholds they induce."""
    from .confirmation import is_lmd_ghost_safe
    from .ffg import view_checkpoints

    store, params = sim.store, sim.params
    bf = params.boost_fraction(sim.time.slots_per_epoch)
    v, w = observers
    gj_v = view_checkpoints(store, sim.views[v], tick)[0]
    gj_w = view_checkpoints(store, sim.views[w], tick)[0]
    tot_v, tot_w = store.eba(gj_v.block).total, store.eba(gj_w.block).total
    head = sim.head(v, tick)
    weaker_only = []
    for b in store.chain(head)[1:]:
        ok_v = is_lmd_ghost_safe(store, sim.views[v], tick, b, gj_v, params, sim.schedule)
        ok_w = is_lmd_ghost_safe(store, sim.views[v], tick, b, gj_w, params, sim.schedule)
        if ok_v and not ok_w:
            weaker_only.append(b)
    slashed = sorted(set(store.eba(gj_w.block).validators()) - set(store.eba(gj_v.block).validators()))
    num = lambda x: str(x)  # noqa: E731
    return {
        "observer": v, "other": w, "slot": sim.time.slot_at(tick),
        "gj": gj_v.to_json(), "gj_other": gj_w.to_json(),
        "total": num(tot_v), "total_other": num(tot_w),
        "boost_weight": num(bf * tot_v), "boost_weight_other": num(bf * tot_w),
        "epsilon": num(bf * (tot_w - tot_v)),
        "slashed_between": slashed,
        "precondition": "total weight under every later honest greatest-justified checkpoint "
                        "must not exceed the total under the checkpoint used",
        "precondition_holds": tot_w <= tot_v,
        "safe_only_under_weaker_total": weaker_only,
    }


STRATEGIES = {cls.kind: cls for cls in (Strategy, Silent, Equivocate, WithholdRelease, ConflictingFfg, Scripted)}
STRATEGY_KINDS = tuple(STRATEGIES)


def make_strategy(spec: dict) -> Strategy:
    spec = dict(spec or {"kind": "none"})
    kind = spec.pop("kind", "none")
    return STRATEGIES[kind](**spec)

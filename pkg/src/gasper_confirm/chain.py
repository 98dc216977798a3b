"""Time arithmetic, the block tree, committees and effective balances."""

from __future__ import annotations

import hashlib
import json
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable


class LookupFailure(KeyError):
    pass


class InvalidBlock(ValueError):
    pass


@dataclass(frozen=True)
class TimeConfig:
    slots_per_epoch: int = 32
    ticks_per_slot: int = 12
    vote_offset: int | None = None

    def __post_init__(self):
        if self.slots_per_epoch < 2:
            raise ValueError("slots_per_epoch must be at least 2")
        if self.vote_offset is None:
            object.__setattr__(self, "vote_offset", self.ticks_per_slot // 3)
        if not 0 < self.vote_offset < self.ticks_per_slot:
            raise ValueError("vote_offset must lie strictly inside a slot")

    def epoch_of(self, slot: int) -> int:
        return slot // self.slots_per_epoch

    def first_slot(self, epoch: int) -> int:
        return epoch * self.slots_per_epoch

    def last_slot(self, epoch: int) -> int:
        return (epoch + 1) * self.slots_per_epoch - 1

    def slot_start(self, slot: int) -> int:
        return slot * self.ticks_per_slot

    def slot_at(self, tick: int) -> int:
        return tick // self.ticks_per_slot

    def epoch_at(self, tick: int) -> int:
        return self.epoch_of(self.slot_at(tick))

    def vote_tick(self, slot: int) -> int:
        return self.slot_start(slot) + self.vote_offset

    def ggst(self, gst: int) -> int:
        """First epoch-aligned tick after which every honest node agrees on committees."""
        e = self.epoch_at(gst)
        if gst <= self.slot_start(self.last_slot(e)):
            return self.slot_start(self.first_slot(e + 1))
        return self.slot_start(self.first_slot(e + 2))


class Balances:
    """Immutable validator -> weight mapping with a cached total.

    Weights are ints or Fractions; sums stay exact either way.
    """

    __slots__ = ("_w", "total", "_key")

    def __init__(self, weights):
        self._w = {v: w for v, w in weights.items() if w > 0}
        self.total = sum(self._w.values())
        self._key = None

    def __getitem__(self, v):
        return self._w.get(v, 0)

    def get(self, v, default=0):
        return self._w.get(v, default)

    def __contains__(self, v):
        return v in self._w

    def __len__(self):
        return len(self._w)

    def items(self):
        return self._w.items()

    def validators(self) -> frozenset:
        return frozenset(self._w)

    def weight(self, vals: Iterable[int]):
        w = self._w
        return sum(w.get(v, 0) for v in vals)

    def updated(self, delta) -> "Balances":
        if not delta:
            return self
        w = dict(self._w)
        for v, x in delta:
            w[v] = x
        return Balances(w)

    def key(self):
        if self._key is None:
            self._key = tuple(sorted(self._w.items()))
        return self._key

    def __eq__(self, other):
        return isinstance(other, Balances) and self._w == other._w

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Balances(n={len(self._w)}, total={self.total})"


def weight(balances: Balances, vals) -> object:
    return balances.weight(vals)


def total_validator_set(balances: Balances) -> frozenset:
    return balances.validators()


def to_json_number(x):
    if isinstance(x, Fraction):
        return str(x) if x.denominator != 1 else x.numerator
    return x


@dataclass(frozen=True)
class Block:
    id: str
    slot: int
    proposer: int
    parent: str | None
    ffg_votes: tuple = ()
    slashings: tuple = ()
    eba_delta: tuple = ()
    tag: str = ""

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "slot": self.slot,
            "proposer": self.proposer,
            "parent": self.parent,
            "ffg_votes": [v.to_json() for v in self.ffg_votes],
            "slashings": list(self.slashings),
            "eba_delta": [[v, to_json_number(x)] for v, x in self.eba_delta],
            "tag": self.tag,
        }


def make_block(slot, proposer, parent, ffg_votes=(), slashings=(), eba_delta=(), tag="") -> Block:
    """Build a block whose id is a digest of its content."""
    ffg_votes = tuple(sorted(ffg_votes, key=lambda a: a.sort_key()))
    slashings = tuple(sorted(set(slashings)))
    eba_delta = tuple(sorted(eba_delta))
    payload = json.dumps(
        [
            [v.to_json() for v in ffg_votes],
            list(slashings),
            [[v, str(x)] for v, x in eba_delta],
            tag,
        ],
        separators=(",", ":"),
    )
    digest = hashlib.sha256(payload.encode()).hexdigest()
    head = json.dumps([slot, proposer, parent, digest], separators=(",", ":"))
    bid = hashlib.sha256(head.encode()).hexdigest()[:16]
    return Block(bid, slot, proposer, parent, ffg_votes, slashings, eba_delta, tag)


def genesis_block(tag="genesis") -> Block:
    return make_block(0, -1, None, tag=tag)


class BlockStore:
    """All blocks known to the simulation, with ancestry and balance caches.

    Views reference blocks by id; the store itself is append-only.
    """

    def __init__(self, genesis: Block, genesis_balances: Balances, time: TimeConfig, schedule=None):
        if genesis.parent is not None:
            raise InvalidBlock("genesis must not have a parent")
        self.time = time
        self.schedule = schedule
        self.genesis = genesis.id
        self.blocks = {genesis.id: genesis}
        self.children = {genesis.id: []}
        self._anc = {genesis.id: frozenset([genesis.id])}
        self._depth = {genesis.id: 0}
        self._eba = {genesis.id: genesis_balances}
        self._chk = {}
        self.justifications = {}
        self.memo = {}

    def __contains__(self, bid):
        return bid in self.blocks

    def __len__(self):
        return len(self.blocks)

    def get(self, bid) -> Block:
        try:
            return self.blocks[bid]
        except KeyError:
            raise LookupFailure(bid) from None

    def slot(self, bid) -> int:
        return self.get(bid).slot

    def epoch(self, bid) -> int:
        return self.time.epoch_of(self.get(bid).slot)

    def parent(self, bid):
        return self.get(bid).parent

    def depth(self, bid) -> int:
        return self._depth[bid]

    def add(self, block: Block, check_proposer=True) -> bool:
        """Insert a validity-checked block; returns False if already present."""
        if block.id in self.blocks:
            return False
        if block.parent is None:
            raise InvalidBlock("second genesis")
        if block.parent not in self.blocks:
            raise InvalidBlock(f"unknown parent {block.parent}")
        if block.slot <= self.blocks[block.parent].slot:
            raise InvalidBlock("slot must exceed parent slot")
        if check_proposer and self.schedule is not None:
            if self.schedule.proposer(block.slot) != block.proposer:
                raise InvalidBlock("unexpected proposer")
        self.blocks[block.id] = block
        self.children[block.id] = []
        self.children[block.parent].append(block.id)
        self._anc[block.id] = self._anc[block.parent] | {block.id}
        self._depth[block.id] = self._depth[block.parent] + 1
        self._eba[block.id] = self._eba[block.parent].updated(block.eba_delta)
        return True

    def ancestors(self, bid) -> frozenset:
        try:
            return self._anc[bid]
        except KeyError:
            raise LookupFailure(bid) from None

    def is_ancestor(self, a, d) -> bool:
        if a not in self.blocks:
            raise LookupFailure(a)
        return a in self.ancestors(d)

    def conflicts(self, x, y) -> bool:
        return not (self.is_ancestor(x, y) or self.is_ancestor(y, x))

    def chain(self, bid) -> list:
        """Blocks from genesis to bid inclusive."""
        out = []
        cur = bid
        while cur is not None:
            out.append(cur)
            cur = self.get(cur).parent
        out.reverse()
        return out

    def eba(self, bid) -> Balances:
        try:
            return self._eba[bid]
        except KeyError:
            raise LookupFailure(bid) from None

    def order_key(self, bid):
        return (self.get(bid).slot, bid)

    def boundary_block(self, bid, epoch: int) -> str:
        """Highest-slot ancestor of bid whose slot is at most firstSlot(epoch)."""
        key = (bid, epoch)
        hit = self._chk.get(key)
        if hit is not None:
            return hit
        limit = self.time.first_slot(epoch)
        cur = bid
        while self.blocks[cur].slot > limit:
            cur = self.blocks[cur].parent
        self._chk[key] = cur
        return cur

    def to_jsonl(self) -> str:
        order = sorted(self.blocks, key=self.order_key)
        return "".join(json.dumps(self.blocks[b].to_json(), sort_keys=True) + "\n" for b in order)


def _chunks(seq, n):
    q, r = divmod(len(seq), n)
    out, i = [], 0
    for k in range(n):
        size = q + (1 if k < r else 0)
        out.append(tuple(seq[i:i + size]))
        i += size
    return out


@dataclass
class CommitteeSchedule:
    """Per-epoch partition of active validators into one committee per slot.

    mode "shuffle" reshuffles every epoch; mode "fixed" draws the partition
    once and only permutes which slot each committee gets.
    """

    validators: tuple
    slots_per_epoch: int
    seed: int = 0
    mode: str = "shuffle"
    active: object = None
    _cache: dict = field(default_factory=dict, repr=False)
    _duty: dict = field(default_factory=dict, repr=False)
    _union: dict = field(default_factory=dict, repr=False)
    _latest: dict = field(default_factory=dict, repr=False)
    _prop: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.validators = tuple(sorted(self.validators))
        if self.mode not in ("shuffle", "fixed"):
            raise ValueError(f"unknown committee mode {self.mode!r}")

    def active_set(self, epoch: int) -> tuple:
        if self.active is None:
            return self.validators
        return tuple(sorted(self.active(epoch)))

    def fixed_partition(self) -> list:
        ids = list(self.validators)
        random.Random(f"partition:{self.seed}").shuffle(ids)
        return _chunks(ids, self.slots_per_epoch)

    def committees(self, epoch: int) -> list:
        hit = self._cache.get(epoch)
        if hit is not None:
            return hit
        act = self.active_set(epoch)
        if self.mode == "shuffle":
            ids = list(act)
            random.Random(f"committee:{self.seed}:{epoch}").shuffle(ids)
            comms = _chunks(ids, self.slots_per_epoch)
        else:
            keep = set(act)
            parts = [tuple(v for v in c if v in keep) for c in self.fixed_partition()]
            random.Random(f"order:{self.seed}:{epoch}").shuffle(parts)
            comms = parts
        self._cache[epoch] = comms
        duty = {}
        base = epoch * self.slots_per_epoch
        for i, c in enumerate(comms):
            for v in c:
                duty[v] = base + i
        self._duty[epoch] = duty
        return comms

    def committee(self, slot: int) -> tuple:
        e, i = divmod(slot, self.slots_per_epoch)
        return self.committees(e)[i]

    def duty(self, v, epoch: int):
        self.committees(epoch)
        return self._duty[epoch].get(v)

    def has_duty(self, v, slot: int) -> bool:
        e = slot // self.slots_per_epoch
        d = self._duty.get(e)
        if d is None:
            self.committees(e)
            d = self._duty[e]
        return d.get(v) == slot

    def duties(self, epoch: int) -> dict:
        self.committees(epoch)
        return self._duty[epoch]

    def proposer(self, slot: int) -> int:
        hit = self._prop.get(slot)
        if hit is None:
            act = self.active_set(slot // self.slots_per_epoch)
            hit = random.Random(f"proposer:{self.seed}:{slot}").choice(act)
            self._prop[slot] = hit
        return hit

    def union(self, lo: int, hi: int) -> frozenset:
        """Union of committees of slots lo..hi inclusive (empty when lo > hi)."""
        if lo > hi:
            return frozenset()
        lo = max(lo, 0)
        key = (lo, hi)
        hit = self._union.get(key)
        if hit is None:
            acc = set()
            for s in range(lo, hi + 1):
                acc.update(self.committee(s))
            hit = frozenset(acc)
            self._union[key] = hit
        return hit

    def latest_duties(self, upto: int) -> dict:
        """validator -> latest duty slot <= upto, for validators with any such duty."""
        hit = self._latest.get(upto)
        if hit is not None:
            return hit
        out = {}
        if upto >= 0:
            e = upto // self.slots_per_epoch
            for v, s in self.duties(e).items():
                if s <= upto:
                    out[v] = s
            e -= 1
            remaining = len(self.validators) - len(out)
            while e >= 0 and remaining > 0:
                for v, s in self.duties(e).items():
                    if v not in out:
                        out[v] = s
                remaining = len(self.validators) - len(out)
                e -= 1
        self._latest[upto] = out
        return out


def committee_union(lo: int, hi: int, schedule: CommitteeSchedule) -> frozenset:
    return schedule.union(lo, hi)


def parent_slot_plus_one(store: BlockStore, bid) -> int:
    p = store.parent(bid)
    return 0 if p is None else store.slot(p) + 1


def first_after(sorted_xs, x) -> int:
    return bisect_right(sorted_xs, x)

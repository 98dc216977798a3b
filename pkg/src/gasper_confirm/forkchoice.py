"""Views and the GHOST / LMD-GHOST / LMD-GHOST-HFC fork-choice stack."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

from .chain import Balances, BlockStore, LookupFailure
from .ffg import Checkpoint, FfgVote, is_slashable_pair, justification, view_checkpoints

_MASK = (1 << 64) - 1


def _mix(x: int) -> int:
    # splitmix64 finaliser; deterministic across processes unlike hash()
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _bid_int(bid: str) -> int:
    return int(bid[:15], 16)


class GhostVote(NamedTuple):
    signer: int
    slot: int
    block: str

    def to_json(self):
        return [self.signer, self.slot, self.block]

    @classmethod
    def from_json(cls, x):
        return cls(x[0], x[1], x[2])


def equivocating(a: GhostVote, b: GhostVote) -> bool:
    return a.signer == b.signer and a.slot == b.slot and a.block != b.block


@dataclass
class BoostState:
    block: str | None = None
    score: Fraction = Fraction(2, 5)
    slots_per_epoch: int = 32
    subtree: bool = False

    def weight(self, balances: Balances):
        return Fraction(self.score) / self.slots_per_epoch * balances.total


class View:
    """Messages one validator has received, with arrival ticks.

    Growth is monotone: nothing is ever removed.
    """

    def __init__(self, store: BlockStore):
        self.store = store
        self.blocks = {store.genesis: 0}
        self.ghost_votes = {}
        self.ffg_votes = {}
        self.has_child = set()
        self.by_signer = {}
        self.equivocators = set()
        self.ffg_links = {}
        self.ffg_by_epoch = {}
        self.ffg_by_signer = {}
        self.evidence = {}
        self.block_fp = _mix(_bid_int(store.genesis))
        self.vote_fp = 0

    @property
    def fingerprint(self):
        return (self.block_fp, len(self.blocks), self.vote_fp, len(self.ghost_votes))

    def has(self, kind, msg) -> bool:
        if kind == "block":
            return msg in self.blocks
        if kind == "ghost":
            return msg in self.ghost_votes
        return msg in self.ffg_votes

    def add_block(self, bid: str, tick: int) -> bool:
        if bid in self.blocks:
            return False
        blk = self.store.get(bid)
        if blk.parent not in self.blocks:
            raise LookupFailure(f"parent {blk.parent} not in view")
        self.blocks[bid] = tick
        self.has_child.add(blk.parent)
        self.block_fp = (self.block_fp + _mix(_bid_int(bid))) & _MASK
        return True

    def add_ghost_vote(self, vote: GhostVote, tick: int) -> bool:
        if vote in self.ghost_votes:
            return False
        self.ghost_votes[vote] = tick
        lst = self.by_signer.setdefault(vote.signer, [])
        for other in lst:
            if other.slot == vote.slot and other.block != vote.block:
                self.equivocators.add(vote.signer)
        # keep each signer's votes sorted by slot so the latest valid one is found first
        i = len(lst)
        while i and lst[i - 1].slot > vote.slot:
            i -= 1
        lst.insert(i, vote)
        h = _mix(vote.signer * 1_000_003 + vote.slot * 7919 + _bid_int(vote.block))
        self.vote_fp = (self.vote_fp + h) & _MASK
        return True

    def add_ffg_vote(self, vote: FfgVote, tick: int) -> bool:
        if vote in self.ffg_votes:
            return False
        self.ffg_votes[vote] = tick
        self.ffg_links.setdefault((vote.source, vote.target), set()).add(vote.signer)
        self.ffg_by_epoch.setdefault(vote.target.epoch, {}).setdefault(vote.target, set()).add(vote.signer)
        mine = self.ffg_by_signer.setdefault(vote.signer, [])
        if vote.signer not in self.evidence:
            for other in mine:
                if is_slashable_pair(other, vote):
                    self.evidence[vote.signer] = (other, vote)
                    break
        mine.append(vote)
        return True

    def ffg_voters(self, source: Checkpoint, target: Checkpoint) -> set:
        return self.ffg_links.get((source, target), set())

    def blocks_at(self, tick: int):
        """Block ids received by tick (a snapshot of the block set)."""
        return [b for b, at in self.blocks.items() if at <= tick]

    def leaves(self):
        return [b for b in self.blocks if b not in self.has_child]

    def restricted(self, keep) -> "View":
        """Same votes, block set cut down to keep (which must be parent-closed)."""
        out = View.__new__(View)
        out.__dict__.update(self.__dict__)
        out.blocks = {b: t for b, t in self.blocks.items() if b in keep}
        out.has_child = {self.store.get(b).parent for b in out.blocks if self.store.get(b).parent is not None}
        fp = 0
        for b in out.blocks:
            fp = (fp + _mix(_bid_int(b))) & _MASK
        out.block_fp = fp
        return out

    def with_votes(self, votes) -> "View":
        out = View.__new__(View)
        out.__dict__.update(self.__dict__)
        out.ghost_votes = {v: self.ghost_votes.get(v, 0) for v in votes}
        out.by_signer = {}
        for v in sorted(votes, key=lambda v: v.slot):
            out.by_signer.setdefault(v.signer, []).append(v)
        out.equivocators = set()
        fp = 0
        for v in votes:
            fp = (fp + _mix(v.signer * 1_000_003 + v.slot * 7919 + _bid_int(v.block))) & _MASK
        out.vote_fp = fp
        return out


def ghost_voters(store: BlockStore, view: View, b: str) -> set:
    """Signers of votes in the view for b or a descendant of b."""
    store.get(b)
    out = set()
    for vote in view.ghost_votes:
        if vote.block in store and store.is_ancestor(b, vote.block):
            out.add(vote.signer)
    return out


def latest_votes(store: BlockStore, view: View, t: int, schedule) -> dict:
    """Filtered latest-message map signer -> vote (the four vote filters, in order).

    The result is memoised and shared; callers must not mutate it.
    """
    st = store.time.slot_at(t)
    memo = store.memo.setdefault("latest", {})
    key = (view.fingerprint, st, id(schedule))
    hit = memo.get(key)
    if hit is not None:
        return hit
    out = {}
    eq = view.equivocators
    for signer, votes in view.by_signer.items():
        if signer in eq:
            continue
        for v in reversed(votes):
            if v.slot >= st:
                continue
            if v.block not in view.blocks:
                continue
            if store.blocks[v.block].slot > v.slot:
                continue
            if schedule is not None and not schedule.has_duty(signer, v.slot):
                continue
            out[signer] = v
            break
    memo[key] = out
    return out


def filter_chain(store: BlockStore, view: View, t: int, schedule) -> View:
    return view.with_votes(list(latest_votes(store, view, t, schedule).values()))


def _subtree_weights(store, blocks, votes, balances):
    acc = {}
    for signer, block in votes:
        if block in blocks:
            w = balances[signer]
            if w:
                acc[block] = acc.get(block, 0) + w
    for b in sorted(blocks, key=lambda x: store.blocks[x].slot, reverse=True):
        w = acc.get(b)
        if w:
            p = store.blocks[b].parent
            if p is not None and p in blocks:
                acc[p] = acc.get(p, 0) + w
    return acc


def _subtree_signer_weights(store, blocks, votes, balances):
    # a signer with several votes in one subtree counts once there
    sets = {}
    for signer, block in votes:
        if block in blocks:
            sets.setdefault(block, set()).add(signer)
    for b in sorted(blocks, key=lambda x: store.blocks[x].slot, reverse=True):
        got = sets.get(b)
        p = store.blocks[b].parent
        if got and p is not None and p in blocks:
            sets.setdefault(p, set()).update(got)
    return {b: balances.weight(x) for b, x in sets.items()}


def _walk(store, blocks, votes, balances, st, boost: BoostState | None, one_per_signer=True):
    if one_per_signer:
        acc = _subtree_weights(store, blocks, votes, balances)
    else:
        acc = _subtree_signer_weights(store, blocks, votes, balances)
    children = {}
    for b in blocks:
        p = store.blocks[b].parent
        if p is not None and p in blocks and store.blocks[b].slot <= st:
            children.setdefault(p, []).append(b)
    bw = 0
    boosted = None
    boosted_anc = frozenset()
    if boost is not None and boost.block is not None and boost.block in blocks:
        bw = boost.weight(balances)
        boosted = boost.block
        if boost.subtree:
            boosted_anc = store.ancestors(boosted)
    cur = store.genesis
    while True:
        kids = children.get(cur)
        if not kids:
            return cur
        best, bkey = None, None
        for c in kids:
            w = acc.get(c, 0)
            if bw and (c == boosted or c in boosted_anc):
                w = w + bw
            key = (w, store.blocks[c].slot, c)
            if bkey is None or key > bkey:
                best, bkey = c, key
        cur = best


def ghost(store: BlockStore, view: View, t: int, balances: Balances, boost: BoostState | None = None) -> str:
    """Greedy heaviest-subtree walk from genesis over all votes in the view."""
    st = store.time.slot_at(t)
    votes = [(v.signer, v.block) for v in view.ghost_votes]
    unique = len({s for s, _ in votes}) == len(votes)
    return _walk(store, set(view.blocks), votes, balances, st, boost, unique)


def lmd_ghost(store, view, t, balances, boost=None, schedule=None) -> str:
    st = store.time.slot_at(t)
    lv = latest_votes(store, view, t, schedule)
    return _walk(store, set(view.blocks), [(s, v.block) for s, v in lv.items()], balances, st, boost)


def hfc_blocks(store: BlockStore, view: View, t: int, gj: Checkpoint, gf: Checkpoint) -> set:
    time = store.time
    et = time.epoch_at(t)
    keep = set(store.ancestors(gj.block))
    for leaf in view.leaves():
        if time.epoch_of(store.blocks[leaf].slot) > et:
            continue
        anc = store.ancestors(leaf)
        if gj.block not in anc or gf.block not in anc:
            continue
        js = justification(store, leaf)
        vs = js.gj if time.epoch_of(store.blocks[leaf].slot) == et else js.gu
        if vs != gj and vs.epoch < et - 2:
            continue
        cur = leaf
        while cur not in keep:
            keep.add(cur)
            cur = store.blocks[cur].parent
    return keep & set(view.blocks)


def fil_hfc(store, view, t, gj, gf) -> View:
    return view.restricted(hfc_blocks(store, view, t, gj, gf))


def lmd_ghost_hfc(store, view, t, schedule, boost: BoostState | None = None, balances=None) -> str:
    """Protocol head: LMD-GHOST over the justification-filtered view, weighted by gjView's balances."""
    st = store.time.slot_at(t)
    memo = store.memo.setdefault("head", {})
    bkey = None if boost is None else (boost.block, boost.score, boost.subtree)
    key = (view.fingerprint, st, bkey, None if balances is None else balances.key())
    hit = memo.get(key)
    if hit is not None:
        return hit
    gj, gf = view_checkpoints(store, view, t)
    if balances is None:
        balances = store.eba(gj.block)
    keep = hfc_blocks(store, view, t, gj, gf)
    lv = latest_votes(store, view, t, schedule)
    head = _walk(store, keep, [(s, v.block) for s, v in lv.items()], balances, st, boost)
    memo[key] = head
    return head

"""Checkpoints, FFG votes, per-block justification and slashing bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

from .chain import Balances, BlockStore, LookupFailure


class UndefinedInput(ValueError):
    pass


class IncompleteChain(LookupFailure):
    pass


class MalformedEvidence(ValueError):
    pass


class Checkpoint(NamedTuple):
    block: str
    epoch: int

    def to_json(self):
        return [self.block, self.epoch]

    @classmethod
    def from_json(cls, x):
        return cls(x[0], x[1])


class FfgVote(NamedTuple):
    signer: int
    source: Checkpoint
    target: Checkpoint
    slot: int

    def to_json(self):
        return [self.signer, self.source.to_json(), self.target.to_json(), self.slot]

    def sort_key(self):
        return (self.signer, self.slot, self.source.epoch, self.source.block, self.target.epoch, self.target.block)

    @classmethod
    def from_json(cls, x):
        return cls(x[0], Checkpoint.from_json(x[1]), Checkpoint.from_json(x[2]), x[3])


def checkpoint_of(store: BlockStore, b: str, e: int) -> Checkpoint:
    """The epoch-e checkpoint of chain(b): its last block at or before firstSlot(e)."""
    store.get(b)
    return Checkpoint(store.boundary_block(b, e), e)


def genesis_checkpoint(store: BlockStore) -> Checkpoint:
    return Checkpoint(store.genesis, 0)


def checkpoint_key(store: BlockStore, c: Checkpoint):
    return (c.epoch, store.slot(c.block), c.block)


def max_checkpoint(store: BlockStore, cps):
    return max(cps, key=lambda c: checkpoint_key(store, c))


def is_slashable_pair(a: FfgVote, b: FfgVote) -> bool:
    """Double vote (same target epoch) or surround vote by one signer."""
    if a.signer != b.signer or a == b:
        return False
    if a.target.epoch == b.target.epoch:
        return (a.source, a.target) != (b.source, b.target)
    lo, hi = (a, b) if a.source.epoch < b.source.epoch else (b, a)
    return lo.source.epoch < hi.source.epoch and hi.target.epoch < lo.target.epoch


def record_slashing(slashed: frozenset, evidence) -> frozenset:
    a, b = evidence
    if not is_slashable_pair(a, b):
        raise MalformedEvidence("votes do not form a slashable pair")
    return slashed | {a.signer}


def apply_slash_penalty(balances: Balances, v, sigma) -> Balances:
    return balances.updated([(v, balances[v] * (1 - Fraction(sigma)))])


def supermajority(w, total) -> bool:
    return 3 * w >= 2 * total


@dataclass(frozen=True)
class JustificationState:
    unrealized: frozenset
    finalized: frozenset
    slashed: frozenset
    gu: Checkpoint
    gj: Checkpoint
    gf: Checkpoint
    links: dict = field(compare=False, repr=False, default_factory=dict)
    justified_by: dict = field(compare=False, repr=False, default_factory=dict)


def _prefix(store: BlockStore, b: str):
    """Latest strict ancestor with a lower epoch, or None."""
    memo = store.memo.setdefault("prefix", {})
    if b in memo:
        return memo[b]
    blk = store.get(b)
    if blk.parent is None:
        out = None
    else:
        p = blk.parent
        if store.epoch(p) < store.epoch(b):
            out = p
        else:
            out = _prefix(store, p)
    memo[b] = out
    return out


def _link_on_chain(store: BlockStore, b: str, vote: FfgVote) -> bool:
    tgt = vote.target
    if tgt.block not in store or tgt.epoch > store.epoch(b):
        return False
    if not store.is_ancestor(tgt.block, b):
        return False
    return store.boundary_block(b, tgt.epoch) == tgt.block


def _fixpoint(store: BlockStore, links: dict, gen: Checkpoint):
    justified = {gen}
    by = {}
    for (s, c) in sorted(links, key=lambda sc: (sc[1].epoch, sc[0].epoch, sc[1].block, sc[0].block)):
        if c in justified or s not in justified or s.epoch >= c.epoch:
            continue
        bal = store.eba(c.block)
        if supermajority(bal.weight(links[(s, c)]), bal.total):
            justified.add(c)
            by[c] = s
    return frozenset(justified), by


def _finalized(store: BlockStore, unrealized, links):
    fin = set()
    for c in unrealized:
        for (s, t), signers in links.items():
            if s == c and t.epoch == c.epoch + 1 and t in unrealized:
                bal = store.eba(t.block)
                if supermajority(bal.weight(signers), bal.total):
                    fin.add(c)
                    break
    return fin


def justification(store: BlockStore, b: str) -> JustificationState:
    """U(b), F(b), slashed set and the GU/GJ/GF checkpoints of b, cached per block."""
    hit = store.justifications.get(b)
    if hit is not None:
        return hit
    if b not in store:
        raise IncompleteChain(b)
    # compute iteratively from the nearest cached ancestor to avoid deep recursion
    pending = []
    cur = b
    while cur is not None and cur not in store.justifications:
        pending.append(cur)
        cur = store.get(cur).parent
    for x in reversed(pending):
        store.justifications[x] = _compute(store, x)
    return store.justifications[b]


def _compute(store: BlockStore, b: str) -> JustificationState:
    blk = store.get(b)
    gen = genesis_checkpoint(store)
    if blk.parent is None:
        return JustificationState(frozenset([gen]), frozenset([gen]), frozenset(), gen, gen, gen)
    par = store.justifications[blk.parent]
    links = par.links
    changed = False
    for vote in blk.ffg_votes:
        if not _link_on_chain(store, b, vote):
            continue
        key = (vote.source, vote.target)
        old = links.get(key, frozenset())
        if vote.signer in old:
            continue
        if not changed:
            links = dict(links)
            changed = True
        links[key] = old | {vote.signer}
    if changed:
        unrealized, by = _fixpoint(store, links, gen)
        finalized = frozenset(_finalized(store, unrealized, links) | {gen})
    else:
        unrealized, by, finalized = par.unrealized, par.justified_by, par.finalized
    slashed = par.slashed | frozenset(blk.slashings) if blk.slashings else par.slashed
    gu = max_checkpoint(store, unrealized)
    pre = _prefix(store, b)
    if pre is None:
        gj = gf = gen
    else:
        pj = justification(store, pre)
        gj = pj.gu
        gf = max_checkpoint(store, pj.finalized)
    return JustificationState(unrealized, finalized, slashed, gu, gj, gf, links, by)


def gu(store, b) -> Checkpoint:
    return justification(store, b).gu


def gj(store, b) -> Checkpoint:
    return justification(store, b).gj


def gf(store, b) -> Checkpoint:
    return justification(store, b).gf


def voting_source(store: BlockStore, b: str, e: int) -> Checkpoint:
    eb = store.epoch(b)
    if eb == e:
        return justification(store, b).gj
    if eb < e:
        return justification(store, b).gu
    raise UndefinedInput(f"block epoch {eb} exceeds {e}")


def view_checkpoints(store: BlockStore, view, t: int):
    """(gjView, gfView) over the view's blocks with slot <= slot(t)."""
    time = store.time
    st = time.slot_at(t)
    et = time.epoch_of(st)
    memo = store.memo.setdefault("viewcp", {})
    key = (view.block_fp, len(view.blocks), st)
    hit = memo.get(key)
    if hit is not None:
        return hit
    best_j = best_f = None
    kj = kf = None
    for bid in view.blocks:
        blk = store.blocks[bid]
        if blk.slot > st:
            continue
        js = justification(store, bid)
        vs = js.gj if time.epoch_of(blk.slot) == et else js.gu
        k = checkpoint_key(store, vs)
        if kj is None or k > kj:
            best_j, kj = vs, k
        k = checkpoint_key(store, js.gf)
        if kf is None or k > kf:
            best_f, kf = js.gf, k
    out = (best_j, best_f)
    memo[key] = out
    return out


def gj_view(store, view, t) -> Checkpoint:
    return view_checkpoints(store, view, t)[0]


def gf_view(store, view, t) -> Checkpoint:
    return view_checkpoints(store, view, t)[1]

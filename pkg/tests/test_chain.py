from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from gasper_confirm.chain import (
    Balances, CommitteeSchedule, InvalidBlock, LookupFailure, TimeConfig, committee_union, make_block,
    parent_slot_plus_one,
)
from gasper_confirm.ffg import Checkpoint, checkpoint_of

from conftest import Tree


def test_time_arithmetic():
    t = TimeConfig(slots_per_epoch=32, ticks_per_slot=12)
    assert t.vote_offset == 4
    assert t.epoch_of(31) == 0 and t.epoch_of(32) == 1
    assert t.first_slot(2) == 64 and t.last_slot(2) == 95
    assert t.slot_at(12 * 5 + 11) == 5
    with pytest.raises(ValueError):
        TimeConfig(slots_per_epoch=1)


def test_ggst_two_cases():
    t = TimeConfig(slots_per_epoch=4, ticks_per_slot=12)
    # GST inside epoch 0 before the last slot starts: next epoch
    assert t.ggst(0) == t.slot_start(4)
    assert t.ggst(36) == t.slot_start(4)
    # GST after the last slot of the epoch started: skip one more epoch
    assert t.ggst(37) == t.slot_start(8)


def test_genesis_checkpoint():
    tr = Tree()
    assert checkpoint_of(tr.store, tr.g, 0) == Checkpoint(tr.g, 0)


def test_checkpoint_is_boundary_block():
    tr = Tree(slots_per_epoch=8)
    tr.add("b1", "g", 3)
    tr.add("b2", "b1", 9)
    s = tr.store
    assert checkpoint_of(s, tr["b1"], 0) == Checkpoint(tr.g, 0)
    assert checkpoint_of(s, tr["b1"], 1) == Checkpoint(tr["b1"], 1)
    assert checkpoint_of(s, tr["b2"], 1) == Checkpoint(tr["b1"], 1)
    assert checkpoint_of(s, tr["b2"], 2) == Checkpoint(tr["b2"], 2)
    tr.add("b3", "b1", 8)
    assert checkpoint_of(s, tr["b3"], 1) == Checkpoint(tr["b3"], 1)


def test_checkpoint_unknown_block():
    tr = Tree()
    with pytest.raises(LookupFailure):
        checkpoint_of(tr.store, "nope", 0)


def test_ancestry_and_conflicts():
    tr = Tree()
    tr.add("a", "g", 1)
    tr.add("b", "a", 2)
    tr.add("c", "g", 3)
    s = tr.store
    assert s.is_ancestor(tr.g, tr.g)
    assert s.conflicts(tr["b"], tr["c"]) and s.conflicts(tr["c"], tr["b"])
    assert not s.conflicts(tr["a"], tr["b"])
    assert s.chain(tr["b"]) == [tr.g, tr["a"], tr["b"]]
    with pytest.raises(LookupFailure):
        s.is_ancestor("missing", tr["b"])


def test_block_validity():
    tr = Tree()
    tr.add("a", "g", 3)
    with pytest.raises(InvalidBlock):
        tr.store.add(make_block(3, 0, tr["a"]), check_proposer=False)
    with pytest.raises(InvalidBlock):
        tr.store.add(make_block(5, 0, "0" * 16), check_proposer=False)


def test_block_ids_are_content_hashes():
    a = make_block(1, 2, "p", tag="x")
    assert a == make_block(1, 2, "p", tag="x")
    assert a.id != make_block(1, 3, "p", tag="x").id
    assert a.id != make_block(1, 2, "p", tag="y").id


def test_parent_slot_plus_one():
    tr = Tree()
    tr.add("a", "g", 3)
    tr.add("b", "a", 7)
    assert parent_slot_plus_one(tr.store, tr["b"]) == 4
    assert parent_slot_plus_one(tr.store, tr.g) == 0


def test_committee_union_examples():
    sched = CommitteeSchedule(tuple(range(8)), 2, seed=1)
    assert committee_union(5, 4, sched) == frozenset()
    assert committee_union(0, 1, sched) == frozenset(range(8))
    assert committee_union(3, 3, sched) == frozenset(sched.committee(3))
    assert all(len(sched.committee(s)) == 4 for s in range(6))


def test_store_jsonl_fields():
    tr = Tree()
    tr.add("a", "g", 1)
    import json
    lines = [json.loads(x) for x in tr.store.to_jsonl().splitlines()]
    assert [x["slot"] for x in lines] == [0, 1]
    assert set(lines[0]) == {"id", "slot", "proposer", "parent", "ffg_votes", "slashings", "eba_delta", "tag"}


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 60), spe=st.integers(2, 12), seed=st.integers(0, 10**6), epoch=st.integers(0, 5),
       mode=st.sampled_from(["shuffle", "fixed"]))
def test_committees_partition_active_set(n, spe, seed, epoch, mode):
    sched = CommitteeSchedule(tuple(range(n)), spe, seed, mode)
    comms = sched.committees(epoch)
    assert len(comms) == spe
    flat = [v for c in comms for v in c]
    assert sorted(flat) == list(range(n))
    sizes = [len(c) for c in comms]
    assert max(sizes) - min(sizes) <= 1
    # schedules are a pure function of (seed, epoch)
    assert CommitteeSchedule(tuple(range(n)), spe, seed, mode).committees(epoch) == comms


@settings(max_examples=60, deadline=None)
@given(ws=st.dictionaries(st.integers(0, 30), st.fractions(min_value=0, max_value=10), max_size=20),
       split=st.integers(0, 30))
def test_weight_additivity(ws, split):
    b = Balances(ws)
    xs = {v for v in ws if v < split}
    ys = {v for v in ws if v >= split}
    assert b.weight(xs | ys) == b.weight(xs) + b.weight(ys) == b.total
    assert isinstance(b.total, (int, Fraction))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 100), st.integers(1, 3)), min_size=1, max_size=15), st.integers(0, 8))
def test_checkpoint_idempotent_and_ancestry_partial_order(steps, e):
    tr = Tree(slots_per_epoch=4)
    ids = [tr.g]
    slot = {tr.g: 0}
    for i, (pick, gap) in enumerate(steps):
        p = ids[pick % len(ids)]
        bid = tr.add(f"n{i}", p, slot[p] + gap)
        ids.append(bid)
        slot[bid] = slot[p] + gap
    s = tr.store
    for b in ids:
        c = checkpoint_of(s, b, e)
        assert checkpoint_of(s, c.block, e) == c
        assert s.is_ancestor(c.block, b)
        for d in ids:
            if s.is_ancestor(b, d) and s.is_ancestor(d, b):
                assert b == d
            assert s.conflicts(b, d) == s.conflicts(d, b)

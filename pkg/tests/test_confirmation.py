import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from gasper_confirm.chain import CommitteeSchedule
from gasper_confirm.confirmation import (
    ConfirmationCache, Inadmissible, SafetyParams, UndefinedIndicator, appendix_beta_bound, appendix_beta_ok,
    hon_ffg_ratio, hon_ffg_ratio_var, is_lmd_ghost_safe, justification_threshold, lmd_monotonicity_bound,
    lmd_safety_threshold, p_indicator_oracle, q_indicator, rates_admissible, safety_flags,
    will_chkp_be_justified,
)
from gasper_confirm.ffg import Checkpoint, FfgVote
from gasper_confirm.forkchoice import GhostVote, latest_votes

from conftest import Tree

F = Fraction


def committee_tree(n=16, spe=2, seed=5):
    sched = CommitteeSchedule(tuple(range(n)), spe, seed)
    tr = Tree(n=n, slots_per_epoch=spe, schedule=None)
    tr.store.schedule = None
    return tr, sched


def test_q_indicator_counts():
    tr, sched = committee_tree()
    b = tr.add("b", "g", 1)
    members = sorted(sched.committee(1))
    assert len(members) == 8
    for v in members[:6]:
        tr.view.add_ghost_vote(GhostVote(v, 1, b), 0)
    t = tr.tick(2)
    assert q_indicator(tr.store, tr.view, t, b, 1, tr.balances, sched) == F(3, 4)
    # honest-only oracle over 6 honest members of whom 5 support
    honest = members[1:7]
    assert p_indicator_oracle(tr.store, tr.view, t, b, 1, tr.balances, sched, honest) == F(5, 6)
    for v in members[:2]:
        tr.view.add_ghost_vote(GhostVote(v, 1, tr.g), 0)
    assert q_indicator(tr.store, tr.view, t, b, 1, tr.balances, sched) == F(1, 2)


def test_q_indicator_full_support_and_empty_window():
    tr, sched = committee_tree()
    b = tr.add("b", "g", 1)
    for v in sched.committee(1):
        tr.view.add_ghost_vote(GhostVote(v, 1, b), 0)
    assert q_indicator(tr.store, tr.view, tr.tick(2), b, 1, tr.balances, sched) == 1
    with pytest.raises(UndefinedIndicator):
        q_indicator(tr.store, tr.view, tr.tick(2), b, 0, tr.balances, sched)


def test_safety_threshold_values():
    p = SafetyParams(beta=0, proposer_score=F(2, 5))
    bf = p.boost_fraction(32)
    assert bf == F(1, 80)
    thr = lmd_safety_threshold(64, 64, p, bf)
    assert thr == F(81, 160)
    assert F(3, 4) > thr
    full = SafetyParams(beta=0, proposer_score=F(2, 5), exit_rate=F(1, 100), reward_rate=F(1, 100),
                        penalty_rate=F(1, 100))
    want = F(101, 198) * (1 + F(1, 80) * F(102, 100)) + F(1, 100)
    assert lmd_safety_threshold(64, 64, full, bf, full=True) == want
    assert want == F(417071, 792000)
    assert abs(float(want) - 0.5267) < 1e-4


def test_justification_threshold_lambda():
    total = 90
    assert justification_threshold(total, SafetyParams(beta=F(1, 10))) == 60 + 9
    assert justification_threshold(total, SafetyParams(beta=F(1, 10), lam=0)) == 60
    assert justification_threshold(total, SafetyParams(beta=F(1, 10), lam=4)) == 64


def test_hon_ffg_ratio():
    assert hon_ffg_ratio(0) == F(2, 3)
    assert hon_ffg_ratio(F(1, 6)) == 1
    with pytest.raises(Inadmissible):
        hon_ffg_ratio(F(1, 5))
    assert hon_ffg_ratio_var(F(1, 10), 0, 0, 0) == hon_ffg_ratio(F(1, 10))


def test_bounds():
    assert lmd_monotonicity_bound(F(1, 80)) == F(79, 320)
    # an admissible beta written to 3 decimals is at most 0.246
    assert F(246, 1000) < F(79, 320) < F(247, 1000)
    assert abs(appendix_beta_bound(F(1, 80)) - (5 - math.sqrt(9.2)) / 8) < 1e-15
    assert appendix_beta_ok(F(24, 100), F(1, 80)) and not appendix_beta_ok(F(25, 100), F(1, 80))


def test_rate_admissibility():
    assert rates_admissible(SafetyParams(exit_rate=F(1, 100), reward_rate=F(1, 100), penalty_rate=F(1, 100)),
                            F(1, 80)) == []
    assert rates_admissible(SafetyParams(exit_rate=F(1, 10)), F(1, 80))


def test_genesis_is_vacuously_safe():
    tr, sched = committee_tree()
    assert is_lmd_ghost_safe(tr.store, tr.view, tr.tick(3), tr.g, Checkpoint(tr.g, 0), SafetyParams(), sched)


def test_will_chkp_be_justified_projection():
    tr, sched = committee_tree(n=16, spe=4)
    g0 = Checkpoint(tr.g, 0)
    b = tr.add("b", "g", 4)
    tgt = Checkpoint(b, 1)
    t = tr.tick(6)
    # slots 4 and 5 elapsed, 8 members; slots 6 and 7 are projected at weight 8
    seen = sorted(sched.union(4, 5))
    for v in seen[:3]:
        tr.view.add_ffg_vote(FfgVote(v, g0, tgt, sched.duty(v, 1)), 0)
    p0 = SafetyParams()
    assert will_chkp_be_justified(tr.store, tr.view, b, 1, t, p0, sched)  # 3 + 8 >= 32/3
    p = SafetyParams(beta=F(1, 4))
    assert not will_chkp_be_justified(tr.store, tr.view, b, 1, t, p, sched)  # 3 + 6 < 32/3 + 4
    # epoch over: nothing projected
    assert not will_chkp_be_justified(tr.store, tr.view, b, 1, tr.tick(8), p0, sched)


def test_cache_window_and_ancestor_closure():
    tr = Tree(slots_per_epoch=4)
    a = tr.add("a", "g", 1)
    b = tr.add("b", "a", 2)
    c = ConfirmationCache(tr.store, "hfc")
    c.record(2, b)
    assert c.is_confirmed(a, tr.tick(3)) and c.is_confirmed(tr.g, tr.tick(3))
    assert c.is_confirmed(b, tr.tick(7))
    # slot 2 leaves the window once epoch 2 starts
    assert not c.is_confirmed(b, tr.tick(9))


# independent oracle for the vectorised safety check ---------------------------

def direct_flags(tr, sched, chain, t, params, total_bal):
    st_ = tr.time.slot_at(t)
    lv = latest_votes(tr.store, tr.view, t, sched)
    bf = params.boost_fraction(tr.time.slots_per_epoch)
    out = [True]
    for b in chain[1:]:
        lo = tr.store.slot(tr.store.parent(b)) + 1
        win = sched.union(lo, st_ - 1)
        w = total_bal.weight(win)
        s = total_bal.weight(v for v in win if v in lv and tr.store.is_ancestor(b, lv[v].block))
        if not w:
            out.append(False)
            continue
        thr = F(1, 2) * (1 + bf * total_bal.total / w) + params.beta
        out.append(F(s, 1) / w > thr)
    return out


def random_scenario(seed):
    rng = random.Random(seed)
    n, spe = rng.choice([(8, 2), (12, 4), (16, 4)])
    sched = CommitteeSchedule(tuple(range(n)), spe, seed)
    tr = Tree(n=n, slots_per_epoch=spe, weights={v: rng.randint(1, 4) for v in range(n)})
    names = ["g"]
    slot = {"g": 0}
    for i in range(1, 10):
        p = rng.choice(names[-3:])
        s = slot[p] + rng.randint(1, 2)
        tr.add(f"n{i}", p, s)
        names.append(f"n{i}")
        slot[f"n{i}"] = s
    top = max(slot.values()) + 2
    for s in range(top):
        for v in sched.committee(s):
            if rng.random() < 0.8:
                cands = [x for x in names if slot[x] <= s]
                tr.view.add_ghost_vote(GhostVote(v, s, tr[rng.choice(cands)]), 0)
    tip = tr[max(names, key=lambda x: slot[x])]
    params = SafetyParams(beta=F(rng.randint(0, 20), 100), proposer_score=F(rng.randint(0, 4), 5))
    return tr, sched, tip, top, params


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32), st.booleans())
def test_safety_flags_match_direct_evaluation(seed, early):
    tr, sched, tip, top, params = random_scenario(seed)
    t = tr.tick(top // 2 + 1 if early else top)
    chain = tr.store.chain(tip)
    lv = {s: v.block for s, v in latest_votes(tr.store, tr.view, t, sched).items()}
    got = safety_flags(tr.store, chain, lv, t, tr.balances, params, sched)
    assert got == direct_flags(tr, sched, chain, t, params, tr.balances)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.fractions(0, F(1, 3)), st.fractions(0, F(1, 3)))
def test_safety_monotone_in_beta_and_boost(seed, d_beta, d_boost):
    tr, sched, tip, top, params = random_scenario(seed)
    t = tr.tick(top)
    chain = tr.store.chain(tip)
    lv = {s: v.block for s, v in latest_votes(tr.store, tr.view, t, sched).items()}
    base = safety_flags(tr.store, chain, lv, t, tr.balances, params, sched)
    worse = SafetyParams(beta=min(F(99, 100), params.beta + d_beta),
                         proposer_score=params.proposer_score + d_boost)
    harder = safety_flags(tr.store, chain, lv, t, tr.balances, worse, sched)
    assert all(b or not h for b, h in zip(base, harder))


@settings(max_examples=200, deadline=None)
@given(window=st.integers(1, 10**6), extra=st.integers(0, 10**6), beta=st.fractions(0, F(99, 100)),
       p=st.fractions(0, 1), lam=st.one_of(st.none(), st.fractions(0, 10**6)))
def test_full_thresholds_collapse_at_zero_rates(window, extra, beta, p, lam):
    params = SafetyParams(beta=beta, proposer_score=p, lam=lam)
    total = window + extra
    bf = params.boost_fraction(32)
    assert lmd_safety_threshold(window, total, params, bf, full=True) == lmd_safety_threshold(window, total, params, bf)
    assert justification_threshold(total, params, full=True) == justification_threshold(total, params)
    assert hon_ffg_ratio_var(beta, 0, 0, 0) == (F(2, 3) + beta) / (1 - beta)

"""Confirmation rules: safety indicators, thresholds and the cached rule executors."""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction

from .chain import Balances, BlockStore, parent_slot_plus_one
from .ffg import Checkpoint, checkpoint_of, justification, view_checkpoints, voting_source
from .forkchoice import View, latest_votes

RULES = ("lmd", "hfc", "churn", "appendix")
TWO_THIRDS = Fraction(2, 3)


class UndefinedIndicator(ZeroDivisionError):
    pass


class Inadmissible(ValueError):
    pass


def _frac(x):
    return None if x is None else Fraction(x)


@dataclass(frozen=True)
class SafetyParams:
    beta: Fraction = Fraction(0)
    lam: Fraction | None = None
    decay: Fraction = Fraction(0)
    proposer_score: Fraction = Fraction(2, 5)
    exit_rate: Fraction = Fraction(0)
    reward_rate: Fraction = Fraction(0)
    penalty_rate: Fraction = Fraction(0)
    slash_rate: Fraction = Fraction(0)
    w_lower: object = None
    max_lookahead: int = 2

    def __post_init__(self):
        for name in ("beta", "decay", "proposer_score", "exit_rate", "reward_rate", "penalty_rate", "slash_rate"):
            object.__setattr__(self, name, Fraction(getattr(self, name)))
        object.__setattr__(self, "lam", _frac(self.lam))
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")

    def boost_fraction(self, slots_per_epoch: int) -> Fraction:
        return self.proposer_score / slots_per_epoch

    def lower_bound(self, epochs: int):
        return 1 if self.w_lower is None else self.w_lower(epochs)

    def to_json(self):
        out = {}
        for k in ("beta", "lam", "decay", "proposer_score", "exit_rate", "reward_rate", "penalty_rate", "slash_rate"):
            x = getattr(self, k)
            out[k] = None if x is None else str(x)
        out["max_lookahead"] = self.max_lookahead
        return out


# thresholds ---------------------------------------------------------------

def hon_ffg_ratio(beta) -> Fraction:
    beta = Fraction(beta)
    if beta > Fraction(1, 6):
        raise Inadmissible("beta above 1/6 makes the ratio exceed 1")
    return (TWO_THIRDS + beta) / (1 - beta)


def hon_ffg_ratio_var(beta, rho, pi, chi) -> Fraction:
    beta, rho, pi, chi = map(Fraction, (beta, rho, pi, chi))
    return (TWO_THIRDS * (1 + rho - chi * rho) / (1 - pi) + chi + beta) / (1 - beta)


def lmd_support_needed(window, total, params: SafetyParams, boost_fraction, full=False) -> Fraction:
    """Supporting weight that must be strictly exceeded for one ancestor to be safe."""
    wp = boost_fraction * total
    if not full:
        return Fraction(window + wp, 2) + params.beta * window
    rho, pi, chi = params.reward_rate, params.penalty_rate, params.exit_rate
    return (1 + rho) / (2 * (1 - pi)) * (window + wp * (1 + chi + rho)) + chi * total + params.beta * window


def lmd_safety_threshold(window, total, params, boost_fraction, full=False) -> Fraction:
    if not window:
        raise UndefinedIndicator("empty committee window")
    return lmd_support_needed(window, total, params, boost_fraction, full) / window


def justification_threshold(total, params: SafetyParams, full=False) -> Fraction:
    slack = params.beta * total if params.lam is None else min(params.lam, params.beta * total)
    if not full:
        return TWO_THIRDS * total + slack
    rho, pi, chi = params.reward_rate, params.penalty_rate, params.exit_rate
    return total * (TWO_THIRDS * (1 + rho - chi * rho) / (1 - pi) + chi) + slack


def lmd_monotonicity_bound(boost_fraction) -> Fraction:
    return (1 - Fraction(boost_fraction)) / 4


def appendix_beta_bound(boost_fraction) -> float:
    return (5 - math.sqrt(9 + 16 * float(boost_fraction))) / 8


def appendix_beta_ok(beta, boost_fraction) -> bool:
    """Exact test of beta < (5 - sqrt(9 + 16x)) / 8."""
    beta = Fraction(beta)
    lhs = 5 - 8 * beta
    return lhs > 0 and lhs * lhs > 9 + 16 * Fraction(boost_fraction)


def rates_admissible(params: SafetyParams, boost_fraction) -> list:
    """Violated inequalities among the bounds on exit, reward and penalty rates."""
    chi, rho, pi = params.exit_rate, params.reward_rate, params.penalty_rate
    bad = []
    if not chi < TWO_THIRDS:
        bad.append("exit rate must stay below 2/3")
    if not 1 >= pi + chi * (1 + rho):
        bad.append("penalty plus scaled exit rate exceeds 1")
    if pi < 1:
        rhs = Fraction(boost_fraction) / 2 + 2 * chi / (1 - pi) + chi * (rho * (1 - chi) - pi) / (1 - pi)
        if not Fraction(1, 6) >= rhs:
            bad.append("combined rate bound above 1/6")
    else:
        bad.append("penalty rate must stay below 1")
    return bad


# indicators ---------------------------------------------------------------

def _meet_index(store, index, block):
    cur = block
    while cur is not None and cur not in index:
        cur = store.blocks[cur].parent
    return 0 if cur is None else index[cur]


def window_support(store, chain, latest, upto, balances, schedule, restrict=None):
    """Per chain position i >= 1: (window weight, supporting weight) over committees ps+1(chain[i])..upto.

    latest maps signer -> block; restrict optionally limits counted validators.
    """
    n = len(chain)
    index = {b: i for i, b in enumerate(chain)}
    xs = [parent_slot_plus_one(store, chain[i]) for i in range(1, n)]
    wb = [0] * (n + 1)
    sb = [0] * (n + 1)
    duties = schedule.latest_duties(upto)
    for v, w in balances.items():
        if restrict is not None and v not in restrict:
            continue
        d = duties.get(v)
        if d is None:
            continue
        k = bisect_right(xs, d)
        if k == 0:
            continue
        wb[k] += w
        blk = latest.get(v)
        if blk is not None:
            m = _meet_index(store, index, blk)
            kk = k if m > k else m
            if kk >= 1:
                sb[kk] += w
    window = [0] * (n + 1)
    support = [0] * (n + 1)
    for i in range(n - 1, 0, -1):
        window[i] = window[i + 1] + wb[i]
        support[i] = support[i + 1] + sb[i]
    return window[:n], support[:n]


def _indicator(store, view, t, b, s_end, balances, schedule, restrict=None):
    chain = store.chain(b)
    lv = {s: v.block for s, v in latest_votes(store, view, t, schedule).items()}
    window, support = window_support(store, chain, lv, s_end, balances, schedule, restrict)
    if len(chain) == 1 or not window[-1]:
        raise UndefinedIndicator("empty committee window")
    return Fraction(support[-1]) / window[-1]


def q_indicator(store, view, t, b, s_end, balances, schedule) -> Fraction:
    return _indicator(store, view, t, b, s_end, balances, schedule)


def p_indicator_oracle(store, view, t, b, s_end, balances, schedule, honest) -> Fraction:
    return _indicator(store, view, t, b, s_end, balances, schedule, restrict=set(honest))


def safety_flags(store, chain, latest, t, balances, params, schedule, full=False) -> list:
    """Whether each chain position passes the per-ancestor safety inequality (index 0 = genesis)."""
    time = store.time
    window, support = window_support(store, chain, latest, time.slot_at(t) - 1, balances, schedule)
    bf = params.boost_fraction(time.slots_per_epoch)
    # needed(w) is affine in w: slope + offset computed once, compared over a common denominator
    offset = Fraction(lmd_support_needed(0, balances.total, params, bf, full))
    slope = Fraction(lmd_support_needed(1, balances.total, params, bf, full)) - offset
    den = slope.denominator * offset.denominator
    a = slope.numerator * offset.denominator
    c = offset.numerator * slope.denominator
    flags = [True]
    for i in range(1, len(chain)):
        w, s = window[i], support[i]
        flags.append(bool(w) and s * den > a * w + c)
    return flags


def _prefix_and(flags):
    out, ok = [], True
    for f in flags:
        ok = ok and f
        out.append(ok)
    return out


def is_lmd_ghost_safe(store, view, t, b, c: Checkpoint, params, schedule, full=False) -> bool:
    chain = store.chain(b)
    lv = {s: v.block for s, v in latest_votes(store, view, t, schedule).items()}
    return all(safety_flags(store, chain, lv, t, store.eba(c.block), params, schedule, full))


def is_lmd_ghost_safe_full(store, view, t, b, c, params, schedule) -> bool:
    return is_lmd_ghost_safe(store, view, t, b, c, params, schedule, full=True)


def will_chkp_be_justified(store, view, b, e, t, params, schedule, full=False) -> bool:
    time = store.time
    st = time.slot_at(t)
    c = checkpoint_of(store, b, e)
    src = voting_source(store, b, e)
    bal = store.eba(c.block)
    seen = schedule.union(time.first_slot(e), st - 1)
    received = bal.weight(v for v in view.ffg_voters(src, c) if v in seen)
    rest = bal.weight(schedule.union(st, time.last_slot(e)))
    return received + (1 - params.beta) * rest >= justification_threshold(bal.total, params, full)


# evaluation context -------------------------------------------------------

class EvalContext:
    """Memo for evaluating every rule for one observer at one slot start."""

    def __init__(self, store: BlockStore, view: View, t: int, params: SafetyParams, schedule, head: str):
        self.store = store
        self.view = view
        self.t = t
        self.params = params
        self.schedule = schedule
        time = store.time
        self.slot = time.slot_at(t)
        self.epoch = time.epoch_of(self.slot)
        self.head = head
        self.chain = store.chain(head)
        self.index = {b: i for i, b in enumerate(self.chain)}
        self.latest = {s: v.block for s, v in latest_votes(store, view, t, schedule).items()}
        self.gj, self.gf = view_checkpoints(store, view, t)
        self._flags = {}
        self._will = {}
        self._snap = None

    def prefix_safe(self, c: Checkpoint, full=False) -> list:
        key = (c, full)
        hit = self._flags.get(key)
        if hit is None:
            flags = safety_flags(self.store, self.chain, self.latest, self.t, self.store.eba(c.block),
                                 self.params, self.schedule, full)
            hit = _prefix_and(flags)
            self._flags[key] = hit
        return hit

    def lmd_safe(self, b, c, full=False) -> bool:
        i = self.index.get(b)
        if i is None:
            return is_lmd_ghost_safe(self.store, self.view, self.t, b, c, self.params, self.schedule, full)
        return self.prefix_safe(c, full)[i]

    def will_justify(self, b, e, full=False) -> bool:
        c = checkpoint_of(self.store, b, e)
        src = voting_source(self.store, b, e)
        key = (c, src, e, full)
        hit = self._will.get(key)
        if hit is None:
            hit = will_chkp_be_justified(self.store, self.view, b, e, self.t, self.params, self.schedule, full)
            self._will[key] = hit
        return hit

    def snapshot(self) -> list:
        if self._snap is None:
            tick = self.store.time.slot_start(self.slot - 1)
            self._snap = self.view.blocks_at(tick)
        return self._snap


def _current_epoch_branch(ctx: EvalContext, b, full):
    store = ctx.store
    src = justification(store, b).gj
    want = ctx.epoch - 1 if ctx.epoch > 0 else 0
    if src.epoch != want:
        return False
    return ctx.will_justify(b, ctx.epoch, full) and ctx.lmd_safe(b, src, full)


def no_caching_hfc(ctx: EvalContext, b, full=False) -> bool:
    store = ctx.store
    time = store.time
    eb = time.epoch_of(store.blocks[b].slot)
    if eb == ctx.epoch:
        return _current_epoch_branch(ctx, b, full)
    if ctx.slot != time.first_slot(ctx.epoch):
        return False
    if not ctx.will_justify(b, ctx.epoch - 1, full):
        return False
    sources = set()
    for x in ctx.snapshot():
        if time.epoch_of(store.blocks[x].slot) < ctx.epoch and store.is_ancestor(b, x):
            vs = voting_source(store, x, ctx.epoch)
            if vs.epoch >= ctx.epoch - 2:
                sources.add(vs)
    for c in sorted(sources, key=lambda c: (c.epoch, c.block)):
        if ctx.lmd_safe(b, c, full):
            return True
    return False


def no_caching_lmd(ctx: EvalContext, b) -> bool:
    return ctx.lmd_safe(b, ctx.gj)


def no_caching_appendix(ctx: EvalContext, b) -> bool:
    store = ctx.store
    time = store.time
    params = ctx.params
    eb = time.epoch_of(store.blocks[b].slot)
    if eb == ctx.epoch:
        return _current_epoch_branch(ctx, b, False)
    cb = checkpoint_of(store, b, eb)
    if not ctx.lmd_safe(b, cb):
        return False
    found = False
    for x in ctx.snapshot():
        if time.epoch_of(store.blocks[x].slot) < ctx.epoch and store.is_ancestor(b, x):
            if cb in justification(store, x).unrealized:
                found = True
                break
    if not found:
        return False
    gf = ctx.gf
    if not store.is_ancestor(gf.block, b):
        return False
    bal = store.eba(gf.block)
    view = ctx.view
    for e in range(cb.epoch + 1, ctx.epoch + 1):
        seen = ctx.schedule.union(time.first_slot(e), ctx.slot - 1)
        voters = set()
        for target, signers in view.ffg_by_epoch.get(e, {}).items():
            if target.block in store and store.is_ancestor(b, target.block):
                voters.update(v for v in signers if v in seen)
        lhs = bal.weight(voters) + (1 - params.beta) * bal.weight(ctx.schedule.union(ctx.slot, time.last_slot(e)))
        if lhs < TWO_THIRDS * params.lower_bound(e - ctx.gj.epoch) * bal.total:
            return False
    return True


def no_caching(rule: str, ctx: EvalContext, b) -> bool:
    if rule == "lmd":
        return no_caching_lmd(ctx, b)
    if rule == "hfc":
        return no_caching_hfc(ctx, b, False)
    if rule == "churn":
        return no_caching_hfc(ctx, b, True)
    if rule == "appendix":
        return no_caching_appendix(ctx, b)
    raise ValueError(f"unknown rule {rule!r}")


def highest_passing(rule: str, ctx: EvalContext):
    """Highest-slot block on the observer's head chain passing the uncached check."""
    for b in reversed(ctx.chain):
        if no_caching(rule, ctx, b):
            return b
    return None


class ConfirmationCache:
    """Per-slot record of the best block passing a rule, over the current and previous epoch."""

    def __init__(self, store: BlockStore, rule: str):
        self.store = store
        self.rule = rule
        self.entries = {}
        self.gf = None

    def record(self, slot: int, block, gf: Checkpoint | None = None):
        if block is not None:
            self.entries[slot] = block
        self.gf = gf
        lo = self.store.time.first_slot(self.store.time.epoch_of(slot) - 1) + 1
        for s in [s for s in self.entries if s < lo]:
            del self.entries[s]

    def highest(self, t: int):
        time = self.store.time
        st = time.slot_at(t)
        lo = time.first_slot(time.epoch_of(st) - 1) + 1
        best = None
        for s, b in self.entries.items():
            if lo <= s <= st:
                if best is None or self.store.order_key(b) > self.store.order_key(best):
                    best = b
        return best

    def is_confirmed(self, b, t: int) -> bool:
        if self.rule == "appendix" and self.gf is not None and self.store.is_ancestor(b, self.gf.block):
            return True
        tip = self.highest(t)
        return tip is not None and self.store.is_ancestor(b, tip)


class Observer:
    """Confirmation-rule executor attached to one honest validator."""

    def __init__(self, store, schedule, params: SafetyParams, rules=RULES):
        self.store = store
        self.schedule = schedule
        self.params = params
        self.rules = tuple(rules)
        self.caches = {r: ConfirmationCache(store, r) for r in self.rules}

    def evaluate(self, view: View, t: int, head: str) -> dict:
        """Run every rule's uncached check at a slot start and update the caches."""
        ctx = EvalContext(self.store, view, t, self.params, self.schedule, head)
        out = {}
        for r in self.rules:
            best = highest_passing(r, ctx)
            cache = self.caches[r]
            cache.record(ctx.slot, best, ctx.gf)
            out[r] = {"passed": best, "tip": cache.highest(t)}
        out["_gj"] = ctx.gj
        out["_gf"] = ctx.gf
        out["_ctx"] = ctx
        return out

    def is_confirmed(self, rule, b, t) -> bool:
        return self.caches[rule].is_confirmed(b, t)


def is_confirmed_lmd(observer: Observer, b, t) -> bool:
    return observer.is_confirmed("lmd", b, t)


def is_confirmed_hfc(observer: Observer, b, t) -> bool:
    return observer.is_confirmed("hfc", b, t)


def is_confirmed_changing_balances(observer: Observer, b, t) -> bool:
    return observer.is_confirmed("churn", b, t)


def is_confirmed_appendix(observer: Observer, b, t) -> bool:
    return observer.is_confirmed("appendix", b, t)

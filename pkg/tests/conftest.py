from fractions import Fraction

import pytest

from gasper_confirm.chain import Balances, BlockStore, TimeConfig, genesis_block, make_block
from gasper_confirm.forkchoice import View


class Tree:
    """Small hand-built block tree with a shared view, for unit tests."""

    def __init__(self, n=4, slots_per_epoch=8, weights=None, schedule=None):
        self.time = TimeConfig(slots_per_epoch=slots_per_epoch)
        w = weights or {v: 1 for v in range(n)}
        self.balances = Balances(w)
        self.store = BlockStore(genesis_block(), self.balances, self.time, schedule)
        self.g = self.store.genesis
        self.view = View(self.store)
        self.names = {"g": self.g}

    def add(self, name, parent, slot, proposer=0, ffg=(), slashings=(), in_view=True):
        blk = make_block(slot, proposer, self.names.get(parent, parent), ffg_votes=ffg, slashings=slashings,
                         tag=name)
        self.store.add(blk, check_proposer=False)
        self.names[name] = blk.id
        if in_view:
            self.view.add_block(blk.id, 0)
        return blk.id

    def __getitem__(self, name):
        return self.names[name]

    def tick(self, slot):
        return self.time.slot_start(slot)


@pytest.fixture
def tree():
    return Tree()


def frac(x):
    return Fraction(x)


ACCEPTANCE = {}


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")

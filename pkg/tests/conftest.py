"""Shared fixtures: the two-object chair/cushion scene used across modules."""
import math
from types import SimpleNamespace

import numpy as np
import pytest

from diffreason.fol import parse_kb
from diffreason.grounding import GroundAtom, Scene
from diffreason.model import DegreeTable, params_from_table

CHAIR_KB = """\
pred chair/1 @types; pred cushion/1 @types; pred armRest/1 @types; pred partOf/2;
forall x,y: chair(x) & partOf(y,x) -> cushion(y) | armRest(y)
"""

A, B = 0, 1
CHAIR_TABLE = {
    GroundAtom("chair", (A,)): 0.9, GroundAtom("chair", (B,)): 0.4,
    GroundAtom("cushion", (A,)): 0.05, GroundAtom("cushion", (B,)): 0.5,
    GroundAtom("armRest", (A,)): 0.05, GroundAtom("armRest", (B,)): 0.1,
    GroundAtom("partOf", (A, A)): 0.001, GroundAtom("partOf", (B, B)): 0.001,
    GroundAtom("partOf", (A, B)): 0.01, GroundAtom("partOf", (B, A)): 0.95,
}


def chair_rule_by_hand(x, y):
    """Antecedent, consequent and implication degree, straight from the connective definitions."""
    t = CHAIR_TABLE
    ante = t[GroundAtom("chair", (x,))] * t[GroundAtom("partOf", (y, x))]
    cons = 1.0 - (1.0 - t[GroundAtom("cushion", (y,))]) * (1.0 - t[GroundAtom("armRest", (y,))])
    return ante, cons, 1.0 - ante * (1.0 - cons)


@pytest.fixture
def chair():
    kb = parse_kb(CHAIR_KB)
    params, objects = params_from_table(kb.signature, CHAIR_TABLE, 2)
    bindings = [(x, y) for x in (A, B) for y in (A, B)]
    by_hand = {b: chair_rule_by_hand(*b) for b in bindings}
    return SimpleNamespace(
        kb=kb,
        rule=kb.formulas[0],
        scene=Scene("example", objects),
        table=DegreeTable(CHAIR_TABLE),
        params=params,
        bindings=bindings,
        by_hand=by_hand,
        loss_by_hand=-sum(math.log(v[2]) for v in by_hand.values()),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------
# acceptance summary: one line per criterion, shown even without -s

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

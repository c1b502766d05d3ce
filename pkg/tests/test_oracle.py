import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffreason.fol import KnowledgeBase, parse_kb, prenex
from diffreason.grounding import GroundAtom, HerbrandBase, Scene, World, herbrand_base
from diffreason.model import DegreeTable
from diffreason.oracle import (BaseTooLargeError, check_prl_exactness, exact_kb_probability,
                               random_disjoint_instance, valuation, world_mass, world_probability)
from diffreason.prl import degrees as prl_degrees

from conftest import A, B, CHAIR_KB

ONE = Scene("one", np.zeros((1, 1)))


def table(**values):
    """Degree table over object 0 for unary predicates."""
    return DegreeTable({GroundAtom(k, (0,)): v for k, v in values.items()})


def brute_force(kb, scene, source):
    """Naive oracle: loop over every world, multiply its probability by the KB valuation."""
    base = herbrand_base(scene, kb.signature)
    f = {a: float(source.degrees(kb.predicate(a.pred), scene, np.array([a.args]))[0]) for a in base}
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(base)):
        w = World(base, bits)
        p = 1.0
        for a, bit in zip(base.atoms, bits):
            p *= f[a] if bit else 1 - f[a]
        if all(valuation(phi, w, scene) for phi in kb.formulas):
            total += p
    return total


def test_world_probability():
    base = HerbrandBase([GroundAtom("p", (0,))])
    assert world_probability(World(base, [1]), {GroundAtom("p", (0,)): 0.7}) == 0.7
    base = HerbrandBase([GroundAtom("chair", (0,)), GroundAtom("partOf", (1, 0))])
    f = {GroundAtom("chair", (0,)): 0.9, GroundAtom("partOf", (1, 0)): 0.95}
    assert world_probability(World(base, [1, 1]), f) == pytest.approx(0.855, abs=1e-15)
    assert world_probability(World(base, [1, 0]), f) == pytest.approx(0.045, abs=1e-15)
    with pytest.raises(KeyError):
        world_probability(World(base, [1, 0]), {GroundAtom("chair", (0,)): 0.9})


def test_valuation_examples():
    kb = parse_kb(CHAIR_KB + "forall x: ~partOf(x,x)\n")
    scene = Scene("ab", np.zeros((2, 1)))
    base = herbrand_base(scene, kb.signature)
    true = {GroundAtom("chair", (A,)), GroundAtom("partOf", (B, A)), GroundAtom("cushion", (B,))}
    w = World(base, [int(a in true) for a in base])
    assert valuation(kb.formulas[0], w, scene) == 1
    assert valuation(kb.formulas[1], w, scene) == 1
    w2 = World(base, [int(a in true - {GroundAtom("cushion", (B,))}) for a in base])
    assert valuation(kb.formulas[0], w2, scene) == 0


def test_exact_single_atom():
    kb = parse_kb("pred P/1; forall x: P(x)")
    assert exact_kb_probability(kb, ONE, table(P=0.7)) == pytest.approx(0.7, abs=1e-15)


def test_exact_implication():
    kb = parse_kb("pred P/1; pred Q/1; forall x: P(x) -> Q(x)")
    src = table(P=0.855, Q=0.55)
    assert exact_kb_probability(kb, ONE, src) == pytest.approx(0.61525, abs=1e-12)
    rep = check_prl_exactness(kb, ONE, src)
    assert rep.assumptions_hold and rep.abs_diff < 1e-9 and rep.ok


def test_repeated_atom_breaks_prl():
    kb = parse_kb("pred P/1; forall x: P(x) & P(x)")
    rep = check_prl_exactness(kb, ONE, table(P=0.7))
    assert rep.exact == pytest.approx(0.7, abs=1e-15)
    assert rep.prl == pytest.approx(0.49, abs=1e-15)
    assert not rep.assumptions_hold and rep.ok
    assert json.loads(rep.to_json())["assumptions_hold"] is False


def test_shared_atom_across_formulas():
    kb = parse_kb("pred P/1; pred Q/1; forall x: P(x) -> Q(x)\nforall x: P(x)")
    rep = check_prl_exactness(kb, ONE, table(P=0.6, Q=0.3))
    assert not rep.assumptions_hold
    assert rep.exact == pytest.approx(brute_force(kb, ONE, table(P=0.6, Q=0.3)), abs=1e-15)


def test_shared_atom_across_instances():
    # forall x,y: P(x) uses P(a) once per y
    kb = parse_kb("pred P/1; pred Q/1; forall x,y: P(x) | Q(y)")
    scene = Scene("ab", np.zeros((2, 1)))
    src = DegreeTable({GroundAtom(p, (i,)): v for p, vs in (("P", (0.3, 0.6)), ("Q", (0.2, 0.5)))
                       for i, v in enumerate(vs)})
    rep = check_prl_exactness(kb, scene, src)
    assert not rep.assumptions_hold
    assert rep.exact == pytest.approx(brute_force(kb, scene, src), abs=1e-12)


def test_base_cap():
    kb = parse_kb("pred r/2; forall x,y: r(x,y)")
    with pytest.raises(BaseTooLargeError):
        exact_kb_probability(kb, Scene("s", np.zeros((5, 1))), DegreeTable({}))


def test_chair_example_exact(chair):
    exact = exact_kb_probability(chair.kb, chair.scene, chair.table)
    assert exact == pytest.approx(brute_force(chair.kb, chair.scene, chair.table), abs=1e-12)
    assert exact == pytest.approx(0.612, abs=1e-3)


def test_random_instances_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(30):
        kb, scene, params = random_disjoint_instance(rng, max_base=10)
        assert exact_kb_probability(kb, scene, params) == pytest.approx(brute_force(kb, scene, params), abs=1e-12)


def test_exactness_property_sample():
    rng = np.random.default_rng(1)
    for _ in range(200):
        kb, scene, params = random_disjoint_instance(rng)
        rep = check_prl_exactness(kb, scene, params)
        assert rep.assumptions_hold
        assert rep.abs_diff < 1e-9


def test_world_mass_is_one():
    rng = np.random.default_rng(2)
    for _ in range(20):
        kb, scene, params = random_disjoint_instance(rng)
        assert world_mass(kb, scene, params) == pytest.approx(1.0, abs=1e-9)


def test_monotone_in_formulas():
    rng = np.random.default_rng(3)
    for _ in range(50):
        kb, scene, params = random_disjoint_instance(rng, max_base=12)
        for k in range(len(kb.formulas)):
            smaller = KnowledgeBase(kb.signature, kb.formulas[:k])
            larger = KnowledgeBase(kb.signature, kb.formulas[:k + 1])
            assert exact_kb_probability(larger, scene, params) <= exact_kb_probability(smaller, scene, params) + 1e-15


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_valuation_agrees_with_crisp_degrees(seed):
    rng = np.random.default_rng(seed)
    kb, scene, _ = random_disjoint_instance(rng, max_base=12)
    base = herbrand_base(scene, kb.signature)
    bits = rng.integers(0, 2, size=len(base))
    w = World(base, bits)
    crisp = DegreeTable({a: float(b) for a, b in zip(base.atoms, bits)})
    for f in kb.formulas:
        variables, body = prenex(f)
        from diffreason.grounding import binding_array
        args = binding_array(scene.n_objects, len(variables))
        fuzzy = np.asarray(prl_degrees(body, variables, scene, args, crisp))
        assert set(np.unique(fuzzy)) <= {0.0, 1.0}
        assert int(np.all(fuzzy == 1.0)) == valuation(f, w, scene)

"""Exact semantics by brute-force world enumeration.

Ground atoms are independent Bernoulli variables with means given by the
model.  The probability that a knowledge base holds is the total mass of the
worlds that satisfy every formula.  This is exponential in the Herbrand base
and only meant as a test oracle for small scenes.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .fol import (And, Atom, Constant, Forall, Formula, Implies, KnowledgeBase, Not, Or,
                  PredicateSig, Variable, atoms, prenex, walk)
from .grounding import GroundAtom, HerbrandBase, Scene, World, binding_array, herbrand_base

ENUMERATION_CAP = 24
_CHUNK = 1 << 16


class BaseTooLargeError(ValueError):
    pass


def world_probability(w: World, degrees: Mapping[GroundAtom, float]) -> float:
    """Product over atoms of ``f`` if the atom is true in ``w``, else ``1 - f``."""
    prob = 1.0
    for atom, bit in w.items():
        if atom not in degrees:
            raise KeyError(f"no degree for ground atom {atom}")
        f = degrees[atom]
        prob *= f if bit else 1.0 - f
    return prob


# --------------------------------------------------------------------------
# two-valued evaluation, vectorized either over worlds or over bindings

def _bool(f: Formula, leaf: Callable[[Atom], np.ndarray]) -> np.ndarray:
    if isinstance(f, Atom):
        return leaf(f)
    if isinstance(f, Not):
        return ~_bool(f.child, leaf)
    if isinstance(f, And):
        return _bool(f.left, leaf) & _bool(f.right, leaf)
    if isinstance(f, Or):
        return _bool(f.left, leaf) | _bool(f.right, leaf)
    if isinstance(f, Implies):
        return ~_bool(f.antecedent, leaf) | _bool(f.consequent, leaf)
    raise ValueError(f"unexpected node {type(f).__name__} in a quantifier-free body")


def ground(atom: Atom, binding: Mapping[str, int]) -> GroundAtom:
    args = tuple(binding[t.name] if isinstance(t, Variable) else t.index for t in atom.terms)
    return GroundAtom(atom.pred.name, args)


def world_tensors(w: World) -> dict[str, np.ndarray]:
    """Dense per-predicate arrays of a world's bits (-1 where an atom is absent)."""
    by_pred: dict[str, list[tuple[tuple[int, ...], int]]] = {}
    for atom, bit in w.items():
        by_pred.setdefault(atom.pred, []).append((atom.args, bit))
    out = {}
    for pred, entries in by_pred.items():
        arity = len(entries[0][0])
        n = 1 + max((max(a) for a, _ in entries), default=-1)
        arr = np.full((n,) * arity, -1, dtype=np.int8)
        for a, bit in entries:
            arr[a] = bit
        out[pred] = arr
    return out


def truth_values(body: Formula, variables: Sequence[str], args: np.ndarray, w: World,
                 tensors: Optional[dict] = None) -> np.ndarray:
    """Classical truth of ``body`` in world ``w`` for each row of ``args``."""
    tensors = world_tensors(w) if tensors is None else tensors
    args = np.asarray(args, dtype=np.int64).reshape(-1, len(variables))
    pos = {v: i for i, v in enumerate(variables)}

    def leaf(a: Atom) -> np.ndarray:
        arr = tensors.get(a.pred.name)
        cols = tuple(args[:, pos[t.name]] if isinstance(t, Variable) else np.full(len(args), t.index)
                     for t in a.terms)
        if arr is None or any(np.any(c >= arr.shape[0]) for c in cols):
            raise KeyError(f"world does not assign {a.pred.name} on every binding")
        bits = arr[cols]
        if np.any(bits < 0):
            raise KeyError(f"world does not assign {a.pred.name} on every binding")
        return bits.astype(bool)

    return _bool(body, leaf)


def valuation(f: Formula, w: World, scene: Scene) -> int:
    """1 if ``f`` holds in ``w`` (universal prefix ranging over the scene), else 0."""
    variables, body = prenex(f)
    args = binding_array(scene.n_objects, len(variables))
    if len(args) == 0:
        return 1
    return int(np.all(truth_values(body, variables, args, w)))


# --------------------------------------------------------------------------
# exact knowledge-base probability

def atom_degrees(base: HerbrandBase, signature: Sequence[PredicateSig], scene: Scene, params) -> np.ndarray:
    """Model degrees for every atom of ``base``, in base order."""
    by_name = {p.name: p for p in signature}
    out = np.empty(len(base))
    groups: dict[str, list[int]] = {}
    for i, a in enumerate(base.atoms):
        groups.setdefault(a.pred, []).append(i)
    for name, idx in groups.items():
        args = np.array([base.atoms[i].args for i in idx], dtype=np.int64)
        out[idx] = np.asarray(params.degrees(by_name[name], scene, args), dtype=np.float64)
    return out


def _kb_satisfied(kb: KnowledgeBase, scene: Scene, column: Callable[[GroundAtom], np.ndarray],
                  n_worlds: int) -> np.ndarray:
    ok = np.ones(n_worlds, dtype=bool)
    for f in kb.formulas:
        variables, body = prenex(f)
        for row in binding_array(scene.n_objects, len(variables)):
            binding = dict(zip(variables, map(int, row)))
            ok &= _bool(body, lambda a: column(ground(a, binding)))
            if not ok.any():
                return ok
    return ok


def exact_kb_probability(kb: KnowledgeBase, scene: Scene, params, cap: int = ENUMERATION_CAP) -> float:
    """Sum over all worlds of the world probability times the KB's valuation.

    Atoms whose degree is exactly 0 or 1 are fixed instead of enumerated,
    since every world giving them the other value has probability zero.
    """
    base = herbrand_base(scene, kb.signature)
    if len(base) > cap:
        raise BaseTooLargeError(f"Herbrand base has {len(base)} atoms, enumeration cap is {cap}")
    f = atom_degrees(base, kb.signature, scene, params)
    if np.any((f < 0) | (f > 1)):
        raise ValueError("atom degrees must lie in [0, 1]")
    free = np.flatnonzero((f > 0) & (f < 1))
    fixed_bits = f >= 1
    n_free = len(free)
    total_worlds = 1 << n_free
    free_pos = {int(a): j for j, a in enumerate(free)}
    total = 0.0
    for start in range(0, total_worlds, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, total_worlds), dtype=np.int64)
        bits = ((codes[:, None] >> np.arange(n_free)) & 1).astype(bool)
        probs = np.where(bits, f[free], 1.0 - f[free]).prod(axis=1)

        def column(atom: GroundAtom, bits=bits) -> np.ndarray:
            i = base.index[atom]
            j = free_pos.get(i)
            if j is None:
                return np.full(len(bits), fixed_bits[i])
            return bits[:, j]

        ok = _kb_satisfied(kb, scene, column, len(codes))
        total += float(probs[ok].sum())
    return total


def world_mass(kb: KnowledgeBase, scene: Scene, params, cap: int = ENUMERATION_CAP) -> float:
    """Total probability of all worlds (should be 1)."""
    empty = KnowledgeBase(kb.signature, ())
    return exact_kb_probability(empty, scene, params, cap)


# --------------------------------------------------------------------------
# exactness check

@dataclass
class ExactnessReport:
    exact: float
    prl: float
    assumptions_hold: bool
    abs_diff: float

    @property
    def ok(self) -> bool:
        return (not self.assumptions_hold) or self.abs_diff < 1e-9

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _node_atoms(f: Formula, binding) -> set[GroundAtom]:
    return {ground(a, binding) for a in atoms(f)}


def disjointness_holds(kb: KnowledgeBase, scene: Scene) -> bool:
    """Whether every ground atom is used at most once after grounding.

    Checks that formulas use disjoint atom sets, that the instantiations of a
    formula use disjoint atom sets, and that the two children of every binary
    connective use disjoint atom sets in every instantiation.
    """
    seen: set[GroundAtom] = set()
    for f in kb.formulas:
        variables, body = prenex(f)
        for row in binding_array(scene.n_objects, len(variables)):
            binding = dict(zip(variables, map(int, row)))
            inst = _node_atoms(body, binding)
            if inst & seen:
                return False
            seen |= inst
            for node in walk(body):
                kids = node.children()
                if len(kids) == 2 and _node_atoms(kids[0], binding) & _node_atoms(kids[1], binding):
                    return False
    return True


def prl_kb_degree(kb: KnowledgeBase, scene: Scene, params) -> float:
    """Product over formulas and instantiations of the PRL degree (no clamping)."""
    from .prl import degrees

    out = 1.0
    for f in kb.formulas:
        variables, body = prenex(f)
        args = binding_array(scene.n_objects, len(variables))
        if len(args):
            out *= float(np.prod(np.asarray(degrees(body, variables, scene, args, params))))
    return out


def check_prl_exactness(kb: KnowledgeBase, scene: Scene, params, cap: int = ENUMERATION_CAP) -> ExactnessReport:
    exact = exact_kb_probability(kb, scene, params, cap)
    prl = prl_kb_degree(kb, scene, params)
    return ExactnessReport(exact, prl, disjointness_holds(kb, scene), abs(exact - prl))


# --------------------------------------------------------------------------
# random instances satisfying the disjointness premises

def random_disjoint_instance(rng: np.random.Generator, max_base: int = 16, max_leaves: int = 5):
    """Random (kb, scene, params) where every ground atom is used at most once.

    Each leaf gets a fresh predicate over all of its formula's variables (in a
    random order), so distinct bindings and distinct leaves never share atoms.
    """
    from .model import Architecture, init_params

    while True:
        n_objects = int(rng.integers(1, 4))
        n_formulas = int(rng.integers(1, 4))
        signature: list[PredicateSig] = []
        formulas: list[Formula] = []
        budget = max_base
        for fi in range(n_formulas):
            k = int(rng.integers(1, 3))
            per_leaf = n_objects ** k
            max_here = min(max_leaves, budget // per_leaf)
            if max_here < 1:
                break
            n_leaves = int(rng.integers(1, max_here + 1))
            budget -= n_leaves * per_leaf
            variables = tuple(f"x{j}" for j in range(k))
            leaves = []
            for li in range(n_leaves):
                p = PredicateSig(f"p{fi}_{li}", k)
                signature.append(p)
                order = rng.permutation(k)
                leaves.append(Atom(p, tuple(Variable(variables[j]) for j in order)))
            formulas.append(Forall(variables, _random_tree(rng, leaves)))
        if formulas:
            break
    kb = KnowledgeBase(tuple(signature), tuple(formulas))
    m = int(rng.integers(1, 4))
    scene = Scene("random", rng.normal(size=(n_objects, m)))
    widths = {p.name: int(rng.integers(0, 3)) for p in signature}
    arch = Architecture(signature, m, widths)
    params = init_params(arch, int(rng.integers(0, 2**31)))
    # spread the weights so degrees cover (0, 1) well, not just around 0.5
    params = params.with_theta(params.theta * rng.uniform(1.0, 4.0))
    return kb, scene, params


def _random_tree(rng: np.random.Generator, leaves: list[Formula]) -> Formula:
    nodes = list(leaves)
    rng.shuffle(nodes)
    while len(nodes) > 1 or rng.random() < 0.3:
        if len(nodes) > 1 and rng.random() < 0.8:
            i, j = sorted(rng.choice(len(nodes), size=2, replace=False))
            b = nodes.pop(j)
            a = nodes.pop(i)
            op = (And, Or, Implies)[int(rng.integers(0, 3))]
            nodes.append(op(a, b))
        else:
            i = int(rng.integers(0, len(nodes)))
            nodes[i] = Not(nodes[i])
    return nodes[0]

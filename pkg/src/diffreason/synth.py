"""Synthetic scene datasets with typed objects and rule-abiding relations.

Each scene draws object types from ``type_prior``.  With
``scene_coherence > 0`` later objects prefer types that can be related to the
types already present, so parts tend to share a scene with a matching whole.
Types are then repaired by local search until every knowledge-base formula
holds on the type atoms alone.

Relation atoms are proposed in random order with probability
``relation_density``.  A proposal is kept when some rule licenses it (its
antecedent mentions a type atom that is true) and the world stays
consistent; with probability ``1 - relation_rule_strength`` it is kept
unchecked instead.

Features are a per-type prototype plus Gaussian noise, followed by
``layout_dim`` position coordinates: related objects sit near a shared
center and objects with an outgoing relation are shifted by
``layout_offset``.  Look-alike clusters put selected prototypes close to each
other so the supervised problem stays ambiguous where the rules can help.
"""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .fol import KnowledgeBase, PredicateSig, Variable, atoms, decompose_implication, parse_kb, prenex, validate
from .grounding import GroundAtom, Scene, World, binding_array, herbrand_base, read_scenes, write_scenes
from .oracle import _bool, ground

# part -> wholes it can belong to
PART_OF = {
    "cushion": ("chair", "sofa"),
    "armRest": ("chair",),
    "backRest": ("chair", "sofa"),
    "head": ("cat", "horse"),
    "tail": ("cat", "horse"),
    "ear": ("cat", "horse"),
    "muzzle": ("horse",),
}
WHOLES = ("chair", "sofa", "cat", "horse")
# furniture parts that look like animal parts
LOOKALIKES = "cushion head; armRest tail; backRest ear"


def part_whole_kb_text(part_of: dict = None, wholes: Sequence[str] = None, group: str = "types",
                       relation: str = "partOf", structural: bool = True) -> str:
    """Knowledge base in the style of the PASCAL-Part rules for a part/whole table.

    ``structural`` adds irreflexivity and asymmetry of the relation.
    """
    if part_of is None:
        part_of, wholes = PART_OF, WHOLES if wholes is None else wholes
    if wholes is None:
        wholes = []
        for ws in part_of.values():
            for w in ws:
                if w not in wholes:
                    wholes.append(w)
    types = list(wholes) + [p for p in part_of if p not in wholes]
    lines = [f"pred {t}/1 @{group};" for t in types]
    lines.append(f"pred {relation}/2;")
    parts_of: dict[str, list[str]] = {w: [] for w in wholes}
    for p, ws in part_of.items():
        for w in ws:
            parts_of[w].append(p)
    for w in wholes:
        if parts_of[w]:
            lines.append(f"forall x,y: {w}(x) & {relation}(y,x) -> " + " | ".join(f"{p}(y)" for p in parts_of[w]))
    for p, ws in part_of.items():
        lines.append(f"forall x,y: {p}(x) & {relation}(x,y) -> " + " | ".join(f"{w}(y)" for w in ws))
    if structural:
        lines.append(f"forall x: ~{relation}(x,x)")
        lines.append(f"forall x,y: {relation}(x,y) -> ~{relation}(y,x)")
    return "\n".join(lines) + "\n"


def default_kb() -> KnowledgeBase:
    """Eleven types (4 wholes, 7 parts) and a partOf relation."""
    return parse_kb(part_whole_kb_text())


# --------------------------------------------------------------------------

@dataclass
class SynthConfig:
    n_labeled_scenes: int = 7
    n_unlabeled_scenes: int = 200
    n_test_scenes: int = 50
    objects_per_scene: tuple[int, int] = (3, 8)
    n_type_classes: int = 11
    feature_dim: int = 16
    type_prior: Optional[tuple[float, ...]] = None  # None: uniform
    relation_rule_strength: float = 1.0
    feature_noise_sigma: float = 0.5
    relation_density: float = 0.8
    prototype_scale: float = 1.0
    layout_dim: int = 1
    layout_extent: float = 10.0
    layout_spread: float = 0.1
    layout_offset: float = 1.0
    lookalikes: str = LOOKALIKES  # "a b; c d": types that share a base prototype
    lookalike_separation: float = 0.4
    scene_coherence: float = 0.9  # chance an object's type must relate to one already in the scene
    seed: int = 0

    def __post_init__(self):
        self.objects_per_scene = tuple(int(v) for v in self.objects_per_scene)
        lo, hi = self.objects_per_scene
        if lo < 0 or hi < lo:
            raise ValueError("objects_per_scene must be a range lo <= hi with lo >= 0")
        if min(self.n_labeled_scenes, self.n_unlabeled_scenes, self.n_test_scenes) < 0:
            raise ValueError("scene counts must be nonnegative")
        if self.n_type_classes < 2 or self.feature_dim < 1:
            raise ValueError("need at least 2 type classes and a positive feature dimension")
        if self.type_prior is not None:
            self.type_prior = tuple(float(v) for v in self.type_prior)
            if len(self.type_prior) != self.n_type_classes:
                raise ValueError("type_prior length must equal n_type_classes")
            if any(v < 0 for v in self.type_prior) or abs(sum(self.type_prior) - 1.0) > 1e-9:
                raise ValueError("type_prior must be a probability vector")
        for name in ("relation_rule_strength", "relation_density", "scene_coherence"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.layout_dim < self.feature_dim:
            raise ValueError("layout_dim must lie in [0, feature_dim)")
        if self.feature_noise_sigma < 0 or self.layout_spread < 0 or self.layout_extent < 0:
            raise ValueError("feature_noise_sigma must be nonnegative")

    @property
    def prior(self) -> np.ndarray:
        if self.type_prior is None:
            return np.full(self.n_type_classes, 1.0 / self.n_type_classes)
        return np.asarray(self.type_prior)

    @classmethod
    def from_text(cls, text: str) -> "SynthConfig":
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            try:
                if key == "objects_per_scene":
                    lo, hi = val.replace("-", ",").split(",")
                    kwargs[key] = (int(lo), int(hi))
                elif key == "type_prior":
                    kwargs[key] = None if val.lower() in ("", "none", "uniform") else \
                        tuple(float(v) for v in val.split(","))
                else:
                    kwargs[key] = {"int": int, "float": float, "str": str}[kinds[key]](val)
            except ValueError:
                raise ValueError(f"line {lineno}: bad value for {key}: {val!r}") from None
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        out = []
        for k, v in dataclasses.asdict(self).items():
            if k == "objects_per_scene":
                v = f"{v[0]},{v[1]}"
            elif k == "type_prior":
                v = "uniform" if v is None else ",".join(repr(float(x)) for x in v)
            out.append(f"{k} = {v}")
        return "\n".join(out) + "\n"


@dataclass
class GeneratedDataset:
    labeled: list[Scene] = field(default_factory=list)
    unlabeled: list[Scene] = field(default_factory=list)
    test: list[Scene] = field(default_factory=list)
    feature_dim: Optional[int] = None

    @property
    def worlds(self) -> dict[str, World]:
        """Ground-truth worlds of the labeled and test scenes by scene id."""
        return {s.scene_id: s.labels for s in self.labeled + self.test if s.labels is not None}

    def __eq__(self, other):
        return (isinstance(other, GeneratedDataset) and self.labeled == other.labeled
                and self.unlabeled == other.unlabeled and self.test == other.test)


class _Rules:
    """Grounded rule checks used while building a world one atom at a time.

    ``tensors`` maps predicate names to dense int8 arrays of the world under
    construction.
    """

    def __init__(self, kb: KnowledgeBase):
        self.kb = kb
        grouped = {p.name for p in kb.signature if p.group is not None}
        self.forms = [prenex(f) for f in kb.formulas]
        # predicate -> [(formula index, leaf terms)] for every leaf of every formula
        self.uses: dict[str, list] = {}
        # predicate -> [(formula index, leaf terms)] for antecedent leaves of licensing rules
        self.licenses: dict[str, list] = {}
        for fi, (variables, body) in enumerate(self.forms):
            for leaf in atoms(body):
                self.uses.setdefault(leaf.pred.name, []).append((fi, leaf.terms))
            parts = decompose_implication(kb.formulas[fi])
            if parts is None:
                continue
            ante_preds = {a.pred.name for a in atoms(parts[0])}
            if not ante_preds & grouped:
                continue
            for leaf in atoms(parts[0]):
                if leaf.pred.name not in grouped:
                    self.licenses.setdefault(leaf.pred.name, []).append((fi, leaf.terms))

    @staticmethod
    def _rows(variables, terms, args, n) -> Optional[np.ndarray]:
        """Bindings of ``variables`` that ground ``terms`` to ``args``."""
        fixed: dict[str, int] = {}
        for t, a in zip(terms, args):
            if isinstance(t, Variable):
                if fixed.setdefault(t.name, a) != a:
                    return None
            elif t.index != a:
                return None
        free = [v for v in variables if v not in fixed]
        grid = binding_array(n, len(free))
        rows = np.empty((len(grid), len(variables)), dtype=np.int64)
        for j, v in enumerate(variables):
            rows[:, j] = fixed[v] if v in fixed else grid[:, free.index(v)]
        return rows

    @staticmethod
    def _truth(f, variables, rows, tensors) -> np.ndarray:
        pos = {v: i for i, v in enumerate(variables)}

        def leaf(a):
            idx = tuple(rows[:, pos[t.name]] if isinstance(t, Variable) else np.full(len(rows), t.index)
                        for t in a.terms)
            return tensors[a.pred.name][idx].astype(bool)

        return _bool(f, leaf)

    def violations(self, tensors, n) -> list[tuple[int, np.ndarray]]:
        out = []
        for fi, (variables, body) in enumerate(self.forms):
            rows = binding_array(n, len(variables))
            if len(rows) == 0:
                continue
            bad = ~self._truth(body, variables, rows, tensors)
            out.extend((fi, r) for r in rows[bad])
        return out

    def consistent(self, tensors, atom: GroundAtom, n) -> bool:
        """Whether every instantiation that mentions ``atom`` holds."""
        for fi, terms in self.uses.get(atom.pred, ()):
            variables, body = self.forms[fi]
            rows = self._rows(variables, terms, atom.args, n)
            if rows is not None and len(rows) and not np.all(self._truth(body, variables, rows, tensors)):
                return False
        return True

    def licensed(self, tensors, atom: GroundAtom, n) -> bool:
        """Whether some type-conditioned rule fires on ``atom`` with a true conclusion."""
        for fi, terms in self.licenses.get(atom.pred, ()):
            variables, _ = self.forms[fi]
            ante, cons = decompose_implication(self.kb.formulas[fi])
            rows = self._rows(variables, terms, atom.args, n)
            if rows is None or not len(rows):
                continue
            if np.any(self._truth(ante, variables, rows, tensors) & self._truth(cons, variables, rows, tensors)):
                return True
        return False

    def repair(self, tensors, n, free_preds: set, rng, budget: int = 200) -> bool:
        """Flip relation atoms until no instantiation is violated (greedy local search)."""
        bad = self.violations(tensors, n)
        for _ in range(budget):
            if not bad:
                return True
            fi, row = bad[int(rng.integers(len(bad)))]
            variables, body = self.forms[fi]
            binding = dict(zip(variables, map(int, row)))
            cands = sorted({ground(a, binding) for a in atoms(body) if a.pred.name in free_preds})
            for ci in rng.permutation(len(cands)):
                a = cands[ci]
                tensors[a.pred][a.args] ^= 1
                after = self.violations(tensors, n)
                if len(after) < len(bad):
                    bad = after
                    break
                tensors[a.pred][a.args] ^= 1
            else:
                return False
        return not bad


def _lookalike_clusters(spec: str, names: Sequence[str]) -> list[list[int]]:
    clusters = []
    seen: set[str] = set()
    for chunk in spec.split(";"):
        members = chunk.replace(",", " ").split()
        if not members:
            continue
        for name in members:
            if name not in names:
                raise ValueError(f"lookalike type {name!r} is not a member of the type group")
            if name in seen:
                raise ValueError(f"type {name!r} appears in more than one lookalike cluster")
            seen.add(name)
        clusters.append([names.index(n) for n in members])
    return clusters


def _compatibility(kb: KnowledgeBase, types, others, rules: "_Rules") -> np.ndarray:
    """``C[s, t]``: a type-``s`` and a type-``t`` object can be linked by some relation atom."""
    K = len(types)
    binary = [p for p in others if p.arity == 2]
    C = np.zeros((K, K), dtype=bool)
    for s_, t_ in itertools.product(range(K), repeat=2):
        for p in binary:
            for args in ((0, 1), (1, 0)):
                tensors = {q.name: np.zeros((2,) * q.arity, dtype=np.int8) for q in kb.signature}
                tensors[types[s_].name][0] = 1
                tensors[types[t_].name][1] = 1
                atom = GroundAtom(p.name, args)
                tensors[p.name][args] = 1
                if rules.licensed(tensors, atom, 2) and rules.consistent(tensors, atom, 2):
                    C[s_, t_] = True
    return C


def _draw_types(n: int, prior: np.ndarray, C: np.ndarray, coherence: float, rng) -> np.ndarray:
    kinds = np.empty(n, dtype=np.int64)
    for i in range(n):
        p = prior
        if i and coherence > 0 and rng.random() < coherence:
            w = prior * C[:, kinds[:i]].any(axis=1)
            if w.sum() > 0:
                p = w / w.sum()
        kinds[i] = rng.choice(len(prior), p=p)
    return kinds


def _type_group(kb: KnowledgeBase) -> tuple[PredicateSig, ...]:
    groups = kb.groups()
    if len(groups) != 1:
        raise ValueError(f"generation needs exactly one softmax group of type predicates, found {len(groups)}")
    return tuple(next(iter(groups.values())))


def _layout(tensors, binary: Sequence[str], n: int, config: SynthConfig, rng) -> np.ndarray:
    """Positions: linked objects share a cluster center, and objects with an
    outgoing relation (parts) sit at a fixed offset from the center."""
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    outgoing = np.zeros(n, dtype=bool)
    for name in binary:
        for a, b in zip(*np.nonzero(tensors[name])):
            if a != b:
                outgoing[a] = True
                parent[find(int(a))] = find(int(b))
    roots = sorted({find(i) for i in range(n)})
    centers = {r: rng.uniform(0.0, config.layout_extent, size=config.layout_dim) for r in roots}
    jitter = rng.normal(scale=config.layout_spread, size=(n, config.layout_dim))
    pos = np.array([centers[find(i)] for i in range(n)]).reshape(n, config.layout_dim)
    return pos + config.layout_offset * outgoing[:, None] + jitter


def generate(config: SynthConfig, kb: KnowledgeBase) -> GeneratedDataset:
    problems = validate(kb)
    if problems:
        raise ValueError(f"invalid knowledge base: {problems[0]}")
    types = _type_group(kb)
    if len(types) != config.n_type_classes:
        raise ValueError(f"n_type_classes={config.n_type_classes} but the type group has {len(types)} members")
    others = [p for p in kb.signature if p.group is None]
    free_preds = {p.name for p in others}
    binary = [p.name for p in others if p.arity == 2]
    rng = np.random.default_rng(config.seed)
    m_proto = config.feature_dim - config.layout_dim
    prototypes = rng.normal(scale=config.prototype_scale, size=(len(types), m_proto))
    names = [t.name for t in types]
    for cluster in _lookalike_clusters(config.lookalikes, names):
        center = prototypes[cluster[0]].copy()
        for k in cluster:
            offset = rng.normal(scale=config.prototype_scale, size=m_proto)
            prototypes[k] = center + config.lookalike_separation * offset
    rules = _Rules(kb)
    prior = config.prior
    compat = _compatibility(kb, types, others, rules) if config.scene_coherence > 0 else None

    def make_scene(scene_id: str) -> Scene:
        for _ in range(1000):
            lo, hi = config.objects_per_scene
            n = int(rng.integers(lo, hi + 1))
            if compat is None:
                kinds = rng.choice(len(types), size=n, p=prior)
            else:
                kinds = _draw_types(n, prior, compat, config.scene_coherence, rng)
            tensors = {p.name: np.zeros((n,) * p.arity, dtype=np.int8) for p in kb.signature}
            for o, k in enumerate(kinds):
                tensors[types[k].name][o] = 1
            if not rules.repair(tensors, n, free_preds, rng):
                continue  # no relation assignment fixes this type draw
            candidates = [GroundAtom(p.name, args) for p in others
                          for args in itertools.product(range(n), repeat=p.arity)]
            for ci in rng.permutation(len(candidates)):
                atom = candidates[ci]
                if tensors[atom.pred][atom.args] or rng.random() >= config.relation_density:
                    continue
                tensors[atom.pred][atom.args] = 1
                if rng.random() < config.relation_rule_strength and not (
                        rules.licensed(tensors, atom, n) and rules.consistent(tensors, atom, n)):
                    tensors[atom.pred][atom.args] = 0
            feats = prototypes[kinds] + config.feature_noise_sigma * rng.normal(size=(n, m_proto))
            if config.layout_dim:
                feats = np.hstack([feats, _layout(tensors, binary, n, config, rng)])
            base = herbrand_base(Scene(scene_id, feats), kb.signature)
            bits = [int(tensors[a.pred][a.args]) for a in base.atoms]
            return Scene(scene_id, feats, World(base, bits))
        raise ValueError("could not draw a type assignment consistent with the knowledge base")

    out = GeneratedDataset(feature_dim=config.feature_dim)
    out.labeled = [make_scene(f"L{i:04d}") for i in range(config.n_labeled_scenes)]
    out.unlabeled = [make_scene(f"U{i:04d}").unlabeled() for i in range(config.n_unlabeled_scenes)]
    out.test = [make_scene(f"T{i:04d}") for i in range(config.n_test_scenes)]
    return out


# --------------------------------------------------------------------------
# directory layout: labeled.jsonl, unlabeled.jsonl, test.jsonl

SPLITS = ("labeled", "unlabeled", "test")


def write_dataset(path, dataset: GeneratedDataset) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    m = dataset.feature_dim
    for split in SPLITS:
        scenes = getattr(dataset, split)
        write_scenes(path / f"{split}.jsonl", scenes, m if m is not None else None)


def read_dataset(path) -> GeneratedDataset:
    path = Path(path)
    out = GeneratedDataset()
    dims = set()
    for split in SPLITS:
        f = path / f"{split}.jsonl"
        if not f.exists():
            continue
        scenes, m = read_scenes(f)
        if m is not None:
            dims.add(m)
        setattr(out, split, scenes)
    if len(dims) > 1:
        raise ValueError(f"splits declare different feature dimensions {sorted(dims)}")
    out.feature_dim = dims.pop() if dims else None
    return out

"""Scenes, Herbrand bases, bindings and the uniform tuple sampler."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .fol import Formula, KnowledgeBase, PredicateSig, prenex

Binding = dict  # variable name -> object index


class GroundAtom(NamedTuple):
    pred: str
    args: tuple[int, ...]

    def __str__(self):
        return f"{self.pred}({','.join(map(str, self.args))})"


class HerbrandBase:
    """Ordered, duplicate-free list of ground atoms with an index map."""

    def __init__(self, atoms: Iterable[GroundAtom]):
        self.atoms: tuple[GroundAtom, ...] = tuple(GroundAtom(a[0], tuple(a[1])) for a in atoms)
        self.index = {a: i for i, a in enumerate(self.atoms)}
        if len(self.index) != len(self.atoms):
            raise ValueError("duplicate ground atom in Herbrand base")

    def __len__(self):
        return len(self.atoms)

    def __iter__(self):
        return iter(self.atoms)

    def __contains__(self, atom):
        return atom in self.index

    def __eq__(self, other):
        return isinstance(other, HerbrandBase) and self.atoms == other.atoms

    def __repr__(self):
        return f"HerbrandBase({len(self.atoms)} atoms)"


class World:
    """A 0/1 truth assignment over a Herbrand base."""

    def __init__(self, base: HerbrandBase, bits):
        bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
        if len(bits) != len(base):
            raise ValueError(f"world has {len(bits)} bits for a base of {len(base)} atoms")
        if np.any(bits > 1):
            raise ValueError("world bits must be 0 or 1")
        self.base = base
        self.bits = bits

    @classmethod
    def from_mapping(cls, values: Mapping[GroundAtom, int], base: Optional[HerbrandBase] = None) -> "World":
        if base is None:
            base = HerbrandBase(values.keys())
        elif set(values) != set(base.atoms):
            raise ValueError("labels do not cover exactly the Herbrand base")
        return cls(base, [int(values[a]) for a in base.atoms])

    def __getitem__(self, atom) -> int:
        return int(self.bits[self.base.index[GroundAtom(atom[0], tuple(atom[1]))]])

    def get(self, atom, default=None):
        i = self.base.index.get(GroundAtom(atom[0], tuple(atom[1])))
        return default if i is None else int(self.bits[i])

    def items(self):
        return zip(self.base.atoms, (int(b) for b in self.bits))

    def as_dict(self) -> dict[GroundAtom, int]:
        return dict(self.items())

    def __eq__(self, other):
        return isinstance(other, World) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return f"World({int(self.bits.sum())}/{len(self.bits)} true)"


@dataclass(eq=False)
class Scene:
    scene_id: str
    objects: np.ndarray  # (n_objects, m)
    labels: Optional[World] = None

    def __post_init__(self):
        obj = np.asarray(self.objects, dtype=np.float64)
        if obj.ndim == 1 and obj.size == 0:
            obj = obj.reshape(0, 0)
        if obj.ndim != 2:
            raise ValueError("scene objects must be a list of equal-length feature vectors")
        self.objects = obj

    @property
    def n_objects(self) -> int:
        return self.objects.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.objects.shape[1]

    def unlabeled(self) -> "Scene":
        return Scene(self.scene_id, self.objects, None)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.scene_id == other.scene_id
                and self.objects.shape == other.objects.shape
                and np.array_equal(self.objects, other.objects)
                and self.labels == other.labels)


def herbrand_base(scene: Scene, signature: Sequence[PredicateSig]) -> HerbrandBase:
    n = scene.n_objects
    out = []
    for p in signature:
        for args in itertools.product(range(n), repeat=p.arity):
            out.append(GroundAtom(p.name, args))
    return HerbrandBase(out)


def check_scene(scene: Scene, signature: Sequence[PredicateSig]) -> None:
    """Raise ``ValueError`` if the scene's labels do not cover exactly its Herbrand base."""
    if scene.labels is None:
        return
    base = herbrand_base(scene, signature)
    if set(scene.labels.base.atoms) != set(base.atoms):
        raise ValueError(f"labels of scene {scene.scene_id!r} do not cover its Herbrand base")


def binding_array(n_objects: int, k: int) -> np.ndarray:
    """All ``n_objects**k`` tuples in lexicographic order, shape ``(n**k, k)``."""
    if k == 0:
        return np.zeros((1, 0), dtype=np.int64)
    if n_objects == 0:
        return np.zeros((0, k), dtype=np.int64)
    grids = np.indices((n_objects,) * k).reshape(k, -1).T
    return np.ascontiguousarray(grids, dtype=np.int64)


def enumerate_bindings(f: Formula, scene: Scene) -> list[Binding]:
    variables, _ = prenex(f)
    rows = binding_array(scene.n_objects, len(variables))
    return [dict(zip(variables, map(int, r))) for r in rows]


class EmptyUniverseError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    formula: int
    scene: int
    binding: Binding

    def __iter__(self):
        return iter((self.formula, self.scene, self.binding))


class TupleSampler:
    """Uniform sampling with replacement over all (formula, scene, binding) triples.

    The sampler owns its generator; draws are reproducible given the seed.
    """

    def __init__(self, kb: KnowledgeBase, scenes: Sequence[Scene], rng_seed: int = 0,
                 formulas: Optional[Sequence[int]] = None):
        self.kb = kb
        self.scenes = scenes
        self.rng = np.random.default_rng(rng_seed)
        formulas = range(len(kb.formulas)) if formulas is None else formulas
        cells = []
        for fi in formulas:
            k = len(prenex(kb.formulas[fi])[0])
            for si, s in enumerate(scenes):
                size = s.n_objects ** k
                if size:
                    cells.append((fi, si, k, s.n_objects, size))
        self.cells = cells
        self.offsets = np.cumsum([0] + [c[4] for c in cells])
        self.total = int(self.offsets[-1])

    def draw(self, batch_size: int) -> list[tuple[int, int, np.ndarray]]:
        """Draw raw samples as ``(formula, scene, index tuple)``."""
        if batch_size == 0:
            return []
        if self.total == 0:
            raise EmptyUniverseError("no scene yields any binding")
        flat = self.rng.integers(0, self.total, size=batch_size)
        cell = np.searchsorted(self.offsets, flat, side="right") - 1
        out = []
        for u, c in zip(flat, cell):
            fi, si, k, n, _ = self.cells[c]
            r = int(u - self.offsets[c])
            idx = np.empty(k, dtype=np.int64)
            for j in range(k - 1, -1, -1):
                r, idx[j] = divmod(r, n)
            out.append((fi, si, idx))
        return out

    def sample(self, batch_size: int) -> list[Sample]:
        out = []
        for fi, si, idx in self.draw(batch_size):
            variables = prenex(self.kb.formulas[fi])[0]
            out.append(Sample(fi, si, dict(zip(variables, map(int, idx)))))
        return out


def sample_batch(kb: KnowledgeBase, scenes: Sequence[Scene], batch_size: int, rng_seed: int) -> list[Sample]:
    return TupleSampler(kb, scenes, rng_seed).sample(batch_size)


# --------------------------------------------------------------------------
# dataset file: JSON lines, header first

FORMAT_NAME = "diffreason-scenes"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _scene_record(scene: Scene) -> dict:
    labels = None
    if scene.labels is not None:
        labels = [{"pred": a.pred, "args": list(a.args), "value": v} for a, v in scene.labels.items()]
    return {"scene_id": scene.scene_id, "objects": scene.objects.tolist(), "labels": labels}


def write_scenes(path, scenes: Sequence[Scene], feature_dim: Optional[int] = None) -> None:
    if feature_dim is None:
        feature_dim = scenes[0].feature_dim if scenes else 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": FORMAT_NAME, "version": FORMAT_VERSION, "feature_dim": feature_dim}) + "\n")
        for s in scenes:
            if s.n_objects and s.feature_dim != feature_dim:
                raise ValueError(f"scene {s.scene_id!r} has feature dimension {s.feature_dim}, expected {feature_dim}")
            fh.write(json.dumps(_scene_record(s)) + "\n")


def read_scenes(path) -> tuple[list[Scene], Optional[int]]:
    """Read a scene file; returns the scenes and the declared feature dimension.

    An empty file is an empty dataset with no declared dimension.
    """
    scenes: list[Scene] = []
    m = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"malformed record ({exc.msg})", lineno) from None
            if m is None:
                if not isinstance(rec, dict) or rec.get("format") != FORMAT_NAME:
                    raise DatasetFormatError("missing header line", lineno)
                if rec.get("version") != FORMAT_VERSION:
                    raise DatasetFormatError(f"unsupported version {rec.get('version')!r}", lineno)
                m = int(rec["feature_dim"])
                continue
            try:
                scenes.append(_parse_scene(rec, m))
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"bad scene record: {exc}", lineno) from None
    return scenes, m


def _parse_scene(rec: dict, m: int) -> Scene:
    objects = rec["objects"]
    arr = np.asarray(objects, dtype=np.float64).reshape(len(objects), m)
    labels = None
    if rec.get("labels") is not None:
        values = {}
        for item in rec["labels"]:
            v = int(item["value"])
            if v not in (0, 1):
                raise ValueError(f"label value {v} is not 0 or 1")
            atom = GroundAtom(str(item["pred"]), tuple(int(a) for a in item["args"]))
            if any(not 0 <= a < len(objects) for a in atom.args):
                raise ValueError(f"label {atom} refers to an object outside the scene")
            values[atom] = v
        labels = World.from_mapping(values)
    return Scene(str(rec["scene_id"]), arr, labels)

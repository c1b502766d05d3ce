"""Parameterized predicate models and checkpoints.

Each ungrouped predicate gets a small feedforward head (tanh hidden layer,
sigmoid output) over the concatenated features of its arguments.  Predicates
sharing a group share one head with a softmax output, one coordinate per
member, so group members are mutually exclusive.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape
from .fol import PredicateSig
from .grounding import GroundAtom, Scene

DEFAULT_UNARY_WIDTH = 10
DEFAULT_RELATION_WIDTH = 2


@dataclass(frozen=True)
class Head:
    name: str  # predicate name, or group name for softmax heads
    members: tuple[str, ...]
    input_dim: int
    hidden: int

    @property
    def softmax(self) -> bool:
        return len(self.members) > 1 or self.name != self.members[0]

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        out_dim = len(self.members) if self.softmax else 1
        if self.hidden == 0:
            return [("w", (self.input_dim, out_dim)), ("b", (out_dim,))]
        return [("w1", (self.input_dim, self.hidden)), ("b1", (self.hidden,)),
                ("w2", (self.hidden, out_dim)), ("b2", (out_dim,))]

    def fan_ins(self) -> dict[str, int]:
        if self.hidden == 0:
            return {"w": self.input_dim, "b": self.input_dim}
        return {"w1": self.input_dim, "b1": self.input_dim, "w2": self.hidden, "b2": self.hidden}


class Architecture:
    """Layout of the flat parameter vector over predicate heads.

    ``widths`` maps predicate or group names to hidden-layer widths; a width
    of 0 means a single linear layer.
    """

    def __init__(self, signature: Sequence[PredicateSig], feature_dim: int,
                 widths: Optional[Mapping[str, int]] = None):
        self.signature = tuple(signature)
        self.feature_dim = int(feature_dim)
        widths = dict(widths or {})
        heads: list[Head] = []
        self.head_of: dict[str, tuple[Head, int]] = {}
        seen_groups: set[str] = set()
        for p in self.signature:
            if p.group is None:
                default = DEFAULT_UNARY_WIDTH if p.arity == 1 else DEFAULT_RELATION_WIDTH
                head = Head(p.name, (p.name,), p.arity * self.feature_dim, int(widths.get(p.name, default)))
                heads.append(head)
                self.head_of[p.name] = (head, 0)
            elif p.group not in seen_groups:
                seen_groups.add(p.group)
                members = tuple(q.name for q in self.signature if q.group == p.group)
                if p.group in {q.name for q in self.signature}:
                    raise ValueError(f"group name {p.group!r} collides with a predicate name")
                head = Head(p.group, members, self.feature_dim, int(widths.get(p.group, DEFAULT_UNARY_WIDTH)))
                heads.append(head)
                for k, name in enumerate(members):
                    self.head_of[name] = (head, k)
        self.heads = tuple(heads)
        self.layout: dict[str, dict[str, tuple[slice, tuple[int, ...]]]] = {}
        offset = 0
        for h in self.heads:
            entries = {}
            for pname, shape in h.shapes():
                size = int(np.prod(shape))
                entries[pname] = (slice(offset, offset + size), shape)
                offset += size
            self.layout[h.name] = entries
        self.size = offset

    @property
    def widths(self) -> dict[str, int]:
        return {h.name: h.hidden for h in self.heads}

    def __eq__(self, other):
        return (isinstance(other, Architecture) and self.signature == other.signature
                and self.feature_dim == other.feature_dim and self.widths == other.widths)

    def __repr__(self):
        return f"Architecture({len(self.heads)} heads, {self.size} parameters, m={self.feature_dim})"


@dataclass(eq=False)
class Params:
    arch: Architecture
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if self.theta.size != self.arch.size:
            raise ValueError(f"expected {self.arch.size} parameters, got {self.theta.size}")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("parameters must be finite")

    def with_theta(self, theta: np.ndarray) -> "Params":
        return Params(self.arch, theta)

    def weights(self, head: Head, tape: Optional[GradTape] = None) -> dict:
        entries = self.arch.layout[head.name]
        if tape is None:
            return {k: self.theta[s].reshape(shape) for k, (s, shape) in entries.items()}
        key = (id(self.theta), head.name)
        cached = tape.cache.get(key)
        if cached is None:
            theta = tape.watch(self.theta)
            cached = {k: ad.reshape(theta[s], shape) for k, (s, shape) in entries.items()}
            tape.cache[key] = cached
        return cached

    def head_output(self, head: Head, x: np.ndarray, tape: Optional[GradTape] = None):
        """Probabilities for a batch of inputs ``x`` of shape ``(n, input_dim)``.

        Returns shape ``(n, K)`` for softmax heads and ``(n,)`` otherwise.
        """
        w = self.weights(head, tape)
        if head.hidden == 0:
            logits = x @ w["w"] + w["b"]
        else:
            logits = ad.tanh(x @ w["w1"] + w["b1"]) @ w["w2"] + w["b2"]
        if head.softmax:
            return ad.softmax(logits)
        return ad.sigmoid(logits[:, 0])

    def head_logits(self, head: Head, x: np.ndarray, tape: Optional[GradTape] = None):
        w = self.weights(head, tape)
        if head.hidden == 0:
            return x @ w["w"] + w["b"]
        return ad.tanh(x @ w["w1"] + w["b1"]) @ w["w2"] + w["b2"]

    def degrees(self, pred: PredicateSig, scene: Scene, args: np.ndarray, tape: Optional[GradTape] = None):
        """Truth degrees of ``pred`` at each row of object indices ``args`` ``(n, arity)``."""
        args = np.asarray(args, dtype=np.int64).reshape(-1, pred.arity)
        x = gather_features(scene.objects, args)
        return self.predict_batch(pred, x, tape)

    def predict_batch(self, pred: PredicateSig, x: np.ndarray, tape: Optional[GradTape] = None):
        head, k = self.arch.head_of[pred.name]
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != head.input_dim:
            raise ValueError(f"{pred.name} expects inputs of dimension {head.input_dim}, got {x.shape}")
        out = self.head_output(head, x, tape)
        return out[:, k] if head.softmax else out


class SceneMemo:
    """Truth source that runs each unary head once over all objects of ``scene``.

    Lookups for other scenes or higher arities go straight to ``params``.
    """

    def __init__(self, params: Params, scene: Scene, tape: Optional[GradTape] = None):
        self.params = params
        self.arch = params.arch
        self.scene = scene
        self.tape = tape
        self._full: dict = {}

    def _head(self, head: Head, tape):
        key = (head.name, tape is not None)
        out = self._full.get(key)
        if out is None:
            out = self.params.head_output(head, self.scene.objects, tape)
            self._full[key] = out
        return out

    def degrees(self, pred: PredicateSig, scene: Scene, args: np.ndarray, tape: Optional[GradTape] = None):
        if pred.arity != 1 or scene is not self.scene or (tape is not None and tape is not self.tape):
            return self.params.degrees(pred, scene, args, tape)
        head, k = self.arch.head_of[pred.name]
        if tape is None and (head.name, True) in self._full:
            full = ad.value(self._full[(head.name, True)])
        else:
            full = self._head(head, tape)
        rows = np.asarray(args, dtype=np.int64).reshape(-1)
        return full[rows, k] if head.softmax else full[rows]


def gather_features(objects: np.ndarray, args: np.ndarray) -> np.ndarray:
    if args.shape[0] == 0:
        return np.zeros((0, objects.shape[1] * args.shape[1]))
    return np.concatenate([objects[args[:, j]] for j in range(args.shape[1])], axis=1)


def predict(pred: PredicateSig, objects: Sequence, params: Params, tape: Optional[GradTape] = None):
    """Truth probability of ``pred`` applied to a tuple of feature vectors.

    Returns a float, or a scalar :class:`~diffreason.autodiff.Node` when a tape is given.
    """
    if len(objects) != pred.arity:
        raise ValueError(f"{pred.name} takes {pred.arity} object(s), got {len(objects)}")
    m = params.arch.feature_dim
    feats = []
    for o in objects:
        o = np.asarray(o, dtype=np.float64).reshape(-1)
        if o.size != m:
            raise ValueError(f"feature vector has length {o.size}, expected {m}")
        feats.append(o)
    x = np.concatenate(feats)[None, :]
    out = params.predict_batch(pred, x, tape)
    if tape is None:
        return float(out[0])
    return ad.reshape(out, ())


def gradient(tape: GradTape, scalar_output) -> np.ndarray:
    return tape.gradient(scalar_output)


def init_params(arch: Architecture, seed: int = 0) -> Params:
    """Uniform init in +-1/sqrt(fan_in), seeded."""
    rng = np.random.default_rng(seed)
    theta = np.empty(arch.size)
    for h in arch.heads:
        fans = h.fan_ins()
        for pname, (s, shape) in arch.layout[h.name].items():
            bound = 1.0 / math.sqrt(max(fans[pname], 1))
            theta[s] = rng.uniform(-bound, bound, size=s.stop - s.start)
    return Params(arch, theta)


class DegreeTable:
    """Fixed truth degrees per ground atom; a stand-in for a trained model.

    Degrees are constants, so gradients through a table are zero.  Keys are
    object indices of the scene being evaluated; functions that pool several
    scenes into one see pooled indices, so use a table with a single scene.
    """

    def __init__(self, values: Mapping[GroundAtom, float]):
        self.values = {GroundAtom(a[0], tuple(a[1])): float(v) for a, v in values.items()}

    def degrees(self, pred: PredicateSig, scene: Scene, args: np.ndarray, tape: Optional[GradTape] = None):
        args = np.asarray(args, dtype=np.int64).reshape(-1, pred.arity)
        try:
            return np.array([self.values[GroundAtom(pred.name, tuple(map(int, r)))] for r in args])
        except KeyError as exc:
            raise KeyError(f"no degree for ground atom {exc.args[0]}") from None


# --------------------------------------------------------------------------
# crafted checkpoints reproducing a degree table

_SATURATE = 100.0


def _logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"degree {p} must lie strictly inside (0, 1)")
    return math.log(p) - math.log1p(-p)


def params_from_table(signature: Sequence[PredicateSig], table: Mapping[GroundAtom, float],
                      n_objects: int) -> tuple[Params, np.ndarray]:
    """Build parameters whose predictions on one-hot objects equal ``table``.

    Returns the parameters and the ``(n_objects, n_objects)`` one-hot feature
    matrix to use as the scene's objects. Each head gets one saturated tanh
    unit per argument tuple, acting as an exact indicator, and the output layer
    reads the tabulated logit off the active unit.
    """
    import itertools

    n = n_objects
    table = {GroundAtom(a[0], tuple(a[1])): float(v) for a, v in table.items()}
    widths = {}
    for p in signature:
        name = p.group or p.name
        widths[name] = n ** p.arity
    arch = Architecture(signature, n, widths)
    theta = np.zeros(arch.size)
    for head in arch.heads:
        entries = arch.layout[head.name]
        arity = head.input_dim // n
        w1 = np.zeros(entries["w1"][1])
        b1 = np.zeros(entries["b1"][1])
        w2 = np.zeros(entries["w2"][1])
        b2 = np.zeros(entries["b2"][1])
        for u, tup in enumerate(itertools.product(range(n), repeat=arity)):
            for j, i in enumerate(tup):
                w1[j * n + i, u] = _SATURATE
            b1[u] = -_SATURATE * (arity - 0.5)
            for k, member in enumerate(head.members):
                v = table[GroundAtom(member, tup)]
                c = math.log(v) if head.softmax else _logit(v)
                # active unit contributes +c/2, inactive -c/2; bias restores the sum
                w2[u, k] = c / 2.0
                b2[k] += c / 2.0
        for pname, arr in (("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)):
            theta[entries[pname][0]] = arr.reshape(-1)
    return Params(arch, theta), np.eye(n)


# --------------------------------------------------------------------------
# checkpoint file: one JSON header line, then theta as little-endian float64

CHECKPOINT_FORMAT = "diffreason-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: Params) -> None:
    arch = params.arch
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "feature_dim": arch.feature_dim,
        "signature": [{"name": p.name, "arity": p.arity, "group": p.group} for p in arch.signature],
        "widths": arch.widths,
        "n_params": arch.size,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(params.theta.astype("<f8").tobytes())


def load_checkpoint(path) -> Params:
    with open(path, "rb") as fh:
        line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise CheckpointError(f"{path}: unreadable checkpoint header") from None
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
    signature = [PredicateSig(p["name"], int(p["arity"]), p["group"]) for p in header["signature"]]
    arch = Architecture(signature, header["feature_dim"], header["widths"])
    n = int(header["n_params"])
    if n != arch.size or len(blob) != 8 * n:
        raise CheckpointError(f"{path}: expected {n} parameters, found {len(blob) // 8}")
    theta = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    return Params(arch, theta)

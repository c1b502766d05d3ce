"""Product Real Logic: fuzzy truth degrees, the forall loss, and MP/MT analysis.

Connectives use the product t-norm and the Reichenbach implication::

    ~a      = 1 - a
    a & b   = a * b
    a | b   = 1 - (1 - a) * (1 - b)
    a -> b  = 1 - a * (1 - b)

All evaluation is batched: a formula body is evaluated for many bindings at
once, each binding a row of object indices.  A *truth source* is anything
with a ``degrees(pred, scene, args, tape)`` method (model parameters or a
fixed :class:`~diffreason.model.DegreeTable`).
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape
from .fol import (And, Atom, Constant, Forall, Formula, Implies, KnowledgeBase, Not, Or,
                  Variable, decompose_implication, prenex)
from .grounding import Binding, Scene, binding_array

EPS = 1e-7


# --------------------------------------------------------------------------
# batched evaluation

def degrees(body: Formula, variables: Sequence[str], scene: Scene, args: np.ndarray, source,
            tape: Optional[GradTape] = None, cache: Optional[dict] = None):
    """Truth degree of a quantifier-free ``body`` for each row of ``args``.

    ``args`` has shape ``(n, len(variables))``. Returns an array (or a tape
    node) of shape ``(n,)``. When ``cache`` is a dict it is filled with the
    degree of every subformula.
    """
    args = np.asarray(args, dtype=np.int64).reshape(-1, len(variables))
    pos = {v: i for i, v in enumerate(variables)}
    return _deg(body, pos, scene, args, source, tape, cache)


def _deg(f, pos, scene, args, source, tape, cache):
    if cache is not None and f in cache:
        return cache[f]
    if isinstance(f, Atom):
        cols = []
        for t in f.terms:
            if isinstance(t, Variable):
                cols.append(args[:, pos[t.name]])
            else:
                cols.append(np.full(len(args), t.index, dtype=np.int64))
        out = source.degrees(f.pred, scene, np.stack(cols, axis=1), tape)
    elif isinstance(f, Not):
        out = 1.0 - _deg(f.child, pos, scene, args, source, tape, cache)
    elif isinstance(f, And):
        out = (_deg(f.left, pos, scene, args, source, tape, cache)
               * _deg(f.right, pos, scene, args, source, tape, cache))
    elif isinstance(f, Or):
        a = _deg(f.left, pos, scene, args, source, tape, cache)
        b = _deg(f.right, pos, scene, args, source, tape, cache)
        out = 1.0 - (1.0 - a) * (1.0 - b)
    elif isinstance(f, Implies):
        a = _deg(f.antecedent, pos, scene, args, source, tape, cache)
        c = _deg(f.consequent, pos, scene, args, source, tape, cache)
        out = 1.0 - a * (1.0 - c)
    elif isinstance(f, Forall):
        raise ValueError("formula body must be quantifier-free")
    else:
        raise TypeError(f"unknown formula node {f!r}")
    if cache is not None:
        cache[f] = out
    return out


def _binding_args(variables: Sequence[str], binding: Mapping[str, int]) -> np.ndarray:
    missing = [v for v in variables if v not in binding]
    if missing:
        raise ValueError(f"binding does not cover variable(s) {', '.join(missing)}")
    return np.array([[binding[v] for v in variables]], dtype=np.int64)


def _variables_of(f: Formula, binding: Mapping[str, int]) -> tuple[tuple[str, ...], Formula]:
    variables, body = prenex(f)
    if not variables:
        variables = tuple(binding)
    return variables, body


@dataclass
class EvalResult:
    value: object  # float, or a scalar tape node
    cache: dict = field(default_factory=dict)  # subformula -> degree

    def __float__(self):
        return float(ad.value(self.value))

    def degree(self, sub: Formula) -> float:
        return float(ad.value(self.cache[sub]).reshape(-1)[0])


def evaluate(f: Formula, binding: Mapping[str, int], scene: Scene, params,
             tape: Optional[GradTape] = None) -> EvalResult:
    """Degree of ``f`` (its quantifier prefix, if any, is ignored) at one binding."""
    variables, body = _variables_of(f, binding)
    cache: dict = {}
    out = degrees(body, variables, scene, _binding_args(variables, binding), params, tape, cache)
    if tape is None:
        return EvalResult(float(out[0]), {k: float(v[0]) for k, v in cache.items()})
    return EvalResult(ad.reshape(out, ()), {k: ad.reshape(v, ()) for k, v in cache.items()})


# the name used throughout the rest of the package and docs
eval = evaluate  # noqa: A001


# --------------------------------------------------------------------------
# losses

def neg_log(p):
    return -ad.log(ad.clip(p, EPS, 1.0))


def forall_loss(f: Formula, scenes: Sequence[Scene], params, tape: Optional[GradTape] = None):
    """Sum over every binding in every scene of ``-log p``, with ``p`` clamped at EPS."""
    variables, body = prenex(f)
    total = 0.0
    for scene in scenes:
        args = binding_array(scene.n_objects, len(variables))
        if len(args) == 0:
            continue
        p = degrees(body, variables, scene, args, params, tape)
        total = total + ad.total(neg_log(p))
    if tape is not None and not isinstance(total, ad.Node):
        return tape.constant(0.0)
    return total if tape is not None else float(total)


@dataclass(frozen=True)
class MpMtWeights:
    d_mp: float
    d_mt: float
    binding: Optional[dict] = None


def mp_mt_arrays(f: Formula, scene: Scene, args: np.ndarray, params):
    """Antecedent, consequent and implication degrees plus d_mp, d_mt per row."""
    parts = decompose_implication(f)
    if parts is None:
        raise ValueError("formula is not an implication")
    variables, _ = prenex(f)
    ante, cons = parts
    a = ad.value(degrees(ante, variables, scene, args, params))
    c = ad.value(degrees(cons, variables, scene, args, params))
    impl = 1.0 - a * (1.0 - c)
    denom = np.maximum(impl, EPS)
    return a, c, impl, a / denom, (1.0 - c) / denom


def mp_mt_weights(f: Formula, binding: Mapping[str, int], scene: Scene, params) -> MpMtWeights:
    variables, _ = prenex(f)
    args = _binding_args(variables, binding)
    _, _, _, d_mp, d_mt = mp_mt_arrays(f, scene, args, params)
    return MpMtWeights(float(d_mp[0]), float(d_mt[0]), dict(binding))


def implication_gradient_split(f: Formula, bindings: Sequence[Mapping[str, int]], scene: Scene,
                               params) -> tuple[np.ndarray, np.ndarray]:
    """Split the gradient of ``sum log p(ante -> cons)`` into MP and MT parts.

    MP part: ``sum d_mp * d p(cons)/d theta``.  MT part: ``sum d_mt * d p(~ante)/d theta``.
    """
    parts = decompose_implication(f)
    if parts is None:
        raise ValueError("formula is not an implication")
    variables, _ = prenex(f)
    ante, cons = parts
    args = np.concatenate([_binding_args(variables, b) for b in bindings]) if bindings else \
        np.zeros((0, len(variables)), dtype=np.int64)
    tape = GradTape()
    tape.watch(params.theta)
    a = degrees(ante, variables, scene, args, params, tape)
    c = degrees(cons, variables, scene, args, params, tape)
    a_v, c_v = ad.value(a), ad.value(c)
    denom = np.maximum(1.0 - a_v * (1.0 - c_v), EPS)
    mp = tape.gradient(ad.total(ad.stop_gradient(a_v / denom) * c))
    mt = tape.gradient(ad.total(ad.stop_gradient((1.0 - c_v) / denom) * (1.0 - a)))
    return mp, mt


def log_implication_gradient(f: Formula, bindings: Sequence[Mapping[str, int]], scene: Scene,
                             params) -> np.ndarray:
    """Tape gradient of ``sum log p(f)`` over the bindings (no clamping)."""
    variables, body = prenex(f)
    args = np.concatenate([_binding_args(variables, b) for b in bindings])
    tape = GradTape()
    tape.watch(params.theta)
    p = degrees(body, variables, scene, args, params, tape)
    return tape.gradient(ad.total(ad.log(p)))


# --------------------------------------------------------------------------
# minibatch losses

class ScenePool:
    """Several scenes stacked into one object matrix so a batch evaluates in one pass."""

    def __init__(self, scenes: Sequence[Scene]):
        self.scenes = list(scenes)
        sizes = [s.n_objects for s in self.scenes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        dims = {s.feature_dim for s in self.scenes if s.n_objects}
        m = dims.pop() if dims else 0
        if dims:
            raise ValueError("scenes have inconsistent feature dimensions")
        objs = [s.objects for s in self.scenes if s.n_objects]
        self.scene = Scene("pool", np.concatenate(objs) if objs else np.zeros((0, m)))

    def global_args(self, scene_idx: np.ndarray, local: np.ndarray) -> np.ndarray:
        return local + self.offsets[scene_idx][:, None]


def _group_batch(batch) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    rows: dict[int, list] = defaultdict(list)
    for item in batch:
        fi, si, b = item
        rows[fi].append((si, b))
    out = {}
    for fi, entries in rows.items():
        scene_idx = np.array([si for si, _ in entries], dtype=np.int64)
        out[fi] = (scene_idx, [b for _, b in entries])
    return out


def _local_args(variables, bindings) -> np.ndarray:
    rows = []
    for b in bindings:
        if isinstance(b, Mapping):
            rows.append([b[v] for v in variables])
        else:
            rows.append(list(b))
    return np.array(rows, dtype=np.int64).reshape(len(rows), len(variables))


def batch_forall_loss(kb: KnowledgeBase, scenes, batch, params, tape: Optional[GradTape] = None):
    """Minibatch estimate of the summed forall loss: ``-sum log p`` over sampled triples."""
    pool = scenes if isinstance(scenes, ScenePool) else ScenePool(scenes)
    total = 0.0
    for fi, (scene_idx, bindings) in _group_batch(batch).items():
        variables, body = prenex(kb.formulas[fi])
        args = pool.global_args(scene_idx, _local_args(variables, bindings))
        p = degrees(body, variables, pool.scene, args, params, tape)
        total = total + ad.total(neg_log(p))
    return total


def normalized_loss(kb: KnowledgeBase, scenes, batch, params, mu: float,
                    tape: Optional[GradTape] = None):
    """MP/MT-normalized loss over a minibatch of (formula, scene, binding) triples.

    For each implication ``ante -> cons`` the batch slice contributes::

        -sum_o [ mu * d_mp(o) / sum d_mp * p(cons|o) + (1 - mu) * d_mt(o) / sum d_mt * p(~ante|o) ]

    The mixing weights are constants for differentiation. A term whose total
    weight is zero is skipped. Non-implications contribute the plain
    ``-log p`` loss.
    """
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    pool = scenes if isinstance(scenes, ScenePool) else ScenePool(scenes)
    total = 0.0
    for fi, (scene_idx, bindings) in _group_batch(batch).items():
        f = kb.formulas[fi]
        variables, body = prenex(f)
        args = pool.global_args(scene_idx, _local_args(variables, bindings))
        parts = decompose_implication(f)
        if parts is None:
            p = degrees(body, variables, pool.scene, args, params, tape)
            total = total + ad.total(neg_log(p))
            continue
        w_mp, w_mt = normalized_mixing(f, pool.scene, args, params, mu)
        ante, cons = parts
        if w_mp is not None and mu > 0.0:
            c = degrees(cons, variables, pool.scene, args, params, tape)
            total = total - ad.total(w_mp * c)
        if w_mt is not None and mu < 1.0:
            a = degrees(ante, variables, pool.scene, args, params, tape)
            total = total - ad.total(w_mt * (1.0 - a))
    return total


def normalized_mixing(f: Formula, scene: Scene, args: np.ndarray, params, mu: float):
    """Detached mixing coefficients ``mu*d_mp/sum d_mp`` and ``(1-mu)*d_mt/sum d_mt``.

    Either is ``None`` when its total weight is zero.
    """
    _, _, _, d_mp, d_mt = mp_mt_arrays(f, scene, args, params)
    s_mp, s_mt = d_mp.sum(), d_mt.sum()
    w_mp = mu * d_mp / s_mp if s_mp > 0 else None
    w_mt = (1.0 - mu) * d_mt / s_mt if s_mt > 0 else None
    return w_mp, w_mt

"""Reasoning-quality metrics: MP/MT weight magnitudes and cr/cu ratios.

``cr`` (correctly reasoned) weighs each MP gradient by whether both the
antecedent and the consequent hold in the labeled world, and each MT
gradient by whether both are false.  ``cu`` (correctly updated) only asks
that the updated side is right: the consequent true for MP, the antecedent
false for MT.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .fol import KnowledgeBase, decompose_implication, prenex
from .grounding import Scene, TupleSampler, binding_array
from .oracle import truth_values, world_tensors
from .prl import ScenePool, mp_mt_arrays

EXHAUSTIVE_LIMIT = 100_000
SAMPLED_PAIRS = 2000


@dataclass
class DiagnosticsRecord:
    iteration: int
    avg_d_mp: Optional[float] = None
    avg_d_mt: Optional[float] = None
    cr_mp: Optional[float] = None
    cr_mt: Optional[float] = None
    cu_mp: Optional[float] = None
    cu_mt: Optional[float] = None
    supervised_loss: Optional[float] = None
    dr_loss: Optional[float] = None
    type_accuracy: Optional[float] = None
    relation_auc: Optional[float] = None


CSV_COLUMNS = tuple(f.name for f in fields(DiagnosticsRecord))


def _implications(kb: KnowledgeBase) -> list[int]:
    return [i for i, f in enumerate(kb.formulas) if decompose_implication(f) is not None]


def _pooled_args(kb: KnowledgeBase, fi: int, scenes: Sequence[Scene], pool: ScenePool):
    variables, _ = prenex(kb.formulas[fi])
    chunks = []
    for si, s in enumerate(scenes):
        local = binding_array(s.n_objects, len(variables))
        if len(local):
            chunks.append(local + pool.offsets[si])
    if not chunks:
        return np.zeros((0, len(variables)), dtype=np.int64)
    return np.concatenate(chunks)


def avg_weights(kb: KnowledgeBase, scenes: Sequence[Scene], params) -> tuple[float, float]:
    """Mean d_mp and d_mt over every (implication, binding) pair in ``scenes``."""
    imps = _implications(kb)
    if not imps:
        raise ValueError("knowledge base has no implication formulas")
    pool = ScenePool(scenes)
    mp, mt = [], []
    for fi in imps:
        args = _pooled_args(kb, fi, scenes, pool)
        if len(args):
            _, _, _, d_mp, d_mt = mp_mt_arrays(kb.formulas[fi], pool.scene, args, params)
            mp.append(d_mp)
            mt.append(d_mt)
    if not mp:
        return math.nan, math.nan
    mp_all, mt_all = np.concatenate(mp), np.concatenate(mt)
    return float(mp_all.mean()), float(mt_all.mean())


def cr_cu_ratios(kb: KnowledgeBase, scenes: Sequence[Scene], params, seed: int = 0,
                 exhaustive_limit: int = EXHAUSTIVE_LIMIT, n_samples: int = SAMPLED_PAIRS):
    """Return ``(cr_mp, cr_mt, cu_mp, cu_mt)``; a ratio with zero weight mass is ``None``.

    Exhaustive over all test bindings when there are at most
    ``exhaustive_limit`` of them, otherwise over ``n_samples`` seeded draws.
    """
    imps = _implications(kb)
    if not imps:
        raise ValueError("knowledge base has no implication formulas")
    for s in scenes:
        if s.labels is None:
            raise ValueError(f"scene {s.scene_id!r} has no labeled world")
    sub = KnowledgeBase(kb.signature, tuple(kb.formulas[i] for i in imps))
    sampler = TupleSampler(sub, scenes, seed)
    if sampler.total <= exhaustive_limit:
        per_cell = [(fi, si, binding_array(scenes[si].n_objects, len(prenex(sub.formulas[fi])[0])))
                    for fi in range(len(imps)) for si in range(len(scenes))]
    else:
        grouped: dict[tuple[int, int], list] = {}
        for fi, si, idx in sampler.draw(n_samples):
            grouped.setdefault((fi, si), []).append(idx)
        per_cell = [(fi, si, np.array(rows)) for (fi, si), rows in sorted(grouped.items())]

    tensors = {}
    sums = np.zeros(6)  # mp mass, mt mass, cr_mp, cr_mt, cu_mp, cu_mt
    for fi, si, args in per_cell:
        if len(args) == 0:
            continue
        f = sub.formulas[fi]
        scene = scenes[si]
        variables, _ = prenex(f)
        ante, cons = decompose_implication(f)
        if si not in tensors:
            tensors[si] = world_tensors(scene.labels)
        va = truth_values(ante, variables, args, scene.labels, tensors[si])
        vc = truth_values(cons, variables, args, scene.labels, tensors[si])
        _, _, _, d_mp, d_mt = mp_mt_arrays(f, scene, args, params)
        sums += [d_mp.sum(), d_mt.sum(),
                 d_mp[va & vc].sum(), d_mt[~va & ~vc].sum(),
                 d_mp[vc].sum(), d_mt[~va].sum()]

    def ratio(num, den):
        return float(num / den) if den > 0 else None

    return (ratio(sums[2], sums[0]), ratio(sums[3], sums[1]),
            ratio(sums[4], sums[0]), ratio(sums[5], sums[1]))


# --------------------------------------------------------------------------
# CSV

def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".9g")


def emit_csv(records: Iterable[DiagnosticsRecord], destination) -> None:
    """Write a header row and one row per record; undefined values are empty cells."""
    own = isinstance(destination, (str, bytes)) or hasattr(destination, "__fspath__")
    fh = open(destination, "w", newline="", encoding="utf-8") if own else destination
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([_fmt(v) for v in astuple(r)])
    finally:
        if own:
            fh.close()


def read_csv(source) -> list[DiagnosticsRecord]:
    own = isinstance(source, (str, bytes)) or hasattr(source, "__fspath__")
    fh = open(source, newline="", encoding="utf-8") if own else source
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        out = []
        for row in reader:
            vals = [None if cell == "" else float(cell) for cell in row]
            vals[0] = int(vals[0])
            out.append(DiagnosticsRecord(*vals))
        return out
    finally:
        if own:
            fh.close()


def format_records(records: Iterable[DiagnosticsRecord]) -> str:
    buf = io.StringIO()
    emit_csv(records, buf)
    return buf.getvalue()

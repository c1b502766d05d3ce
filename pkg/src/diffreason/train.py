"""Semi-supervised training: supervised cross-entropy plus the reasoning loss."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import GradTape
from .diagnostics import DiagnosticsRecord, avg_weights, cr_cu_ratios
from .fol import KnowledgeBase, PredicateSig
from .grounding import Scene, TupleSampler
from .model import Architecture, Params, SceneMemo, init_params
from .prl import EPS, ScenePool, batch_forall_loss, normalized_loss

log = logging.getLogger(__name__)

MODES = ("supervised", "unnormalized", "normalized")


class NumericalAbort(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class TrainConfig:
    mode: str = "supervised"
    mu: float = 0.25
    iterations: int = 2000
    batch_size_labeled: int = 64
    batch_size_unlabeled: int = 512
    learning_rate: float = 1e-2
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    dr_weight: float = 1.0
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")
        if self.iterations < 0 or self.batch_size_labeled < 0 or self.batch_size_unlabeled < 0:
            raise ValueError("iterations and batch sizes must be nonnegative")
        if self.learning_rate <= 0 or self.rmsprop_epsilon <= 0 or self.dr_weight < 0:
            raise ValueError("learning_rate and rmsprop_epsilon must be positive, dr_weight nonnegative")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ValueError("rmsprop_decay must lie in (0, 1)")

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            conv = {"int": int, "float": float, "str": str}[types[key]]
            try:
                kwargs[key] = conv(val)
            except ValueError:
                raise ValueError(f"line {lineno}: bad value for {key}: {val!r}") from None
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                       for k, v in dataclasses.asdict(self).items())


# --------------------------------------------------------------------------
# supervised part

class LabeledPool:
    """All supervised items of a set of labeled scenes.

    An item is one object of a softmax group (scored by the log-likelihood of
    its labeled class) or one ground atom of an ungrouped predicate (scored by
    Bernoulli cross-entropy).  Objects whose group has no true member fall back
    to per-member Bernoulli terms.
    """

    def __init__(self, scenes: Sequence[Scene], signature: Sequence[PredicateSig]):
        for s in scenes:
            if s.labels is None:
                raise ValueError(f"scene {s.scene_id!r} has no labels")
        self.pool = ScenePool(scenes)
        self.signature = tuple(signature)
        groups: dict[str, list[PredicateSig]] = {}
        for p in self.signature:
            if p.group is not None:
                groups.setdefault(p.group, []).append(p)
        # kind, key, global args (n, arity), targets
        self.blocks: list[tuple[str, object, np.ndarray, np.ndarray]] = []
        loose: dict[str, tuple[list, list]] = {p.name: ([], []) for p in self.signature}
        for gname, members in groups.items():
            objs, cls_ = [], []
            for si, s in enumerate(scenes):
                off = int(self.pool.offsets[si])
                for o in range(s.n_objects):
                    vals = [s.labels.get((p.name, (o,))) for p in members]
                    if any(v is None for v in vals):
                        raise ValueError(f"scene {s.scene_id!r} lacks labels for group {gname} on object {o}")
                    if sum(vals) == 1:
                        objs.append(off + o)
                        cls_.append(vals.index(1))
                    else:
                        for p, v in zip(members, vals):
                            loose[p.name][0].append((off + o,))
                            loose[p.name][1].append(v)
            if objs:
                self.blocks.append(("group", tuple(members), np.array(objs)[:, None], np.array(cls_)))
        for p in self.signature:
            if p.group is None:
                for si, s in enumerate(scenes):
                    off = int(self.pool.offsets[si])
                    for atom, v in s.labels.items():
                        if atom.pred == p.name:
                            loose[p.name][0].append(tuple(off + a for a in atom.args))
                            loose[p.name][1].append(v)
        for p in self.signature:
            args, vals = loose[p.name]
            if args:
                self.blocks.append(("atom", p, np.array(args, dtype=np.int64), np.array(vals, dtype=np.float64)))
        self.sizes = np.array([len(b[3]) for b in self.blocks], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)
        self.total = int(self.offsets[-1])

    def loss(self, params: Params, items: Optional[np.ndarray] = None, tape: Optional[GradTape] = None):
        """Summed supervised loss over ``items`` (flat indices; ``None`` means all)."""
        total = 0.0
        for bi, (kind, key, args, target) in enumerate(self.blocks):
            if items is None:
                sel = slice(None)
            else:
                local = items[(items >= self.offsets[bi]) & (items < self.offsets[bi + 1])] - self.offsets[bi]
                if len(local) == 0:
                    continue
                sel = local
            a, t = args[sel], target[sel]
            if kind == "group":
                head, _ = params.arch.head_of[key[0].name]
                x = self.pool.scene.objects[a[:, 0]]
                logp = ad.log_softmax(params.head_logits(head, x, tape))
                rows = np.arange(len(t))
                total = total - ad.total(logp[rows, t])
            else:
                f = params.degrees(key, self.pool.scene, a, tape)
                fc = ad.clip(f, EPS, 1.0 - EPS)
                total = total - ad.total(t * ad.log(fc) + (1.0 - t) * ad.log(1.0 - fc))
        return total


def supervised_loss(scenes: Sequence[Scene], params: Params, tape: Optional[GradTape] = None):
    """Cross-entropy of the labeled worlds of ``scenes`` under the model."""
    if not scenes:
        return 0.0
    return LabeledPool(scenes, params.arch.signature).loss(params, None, tape)


# --------------------------------------------------------------------------
# objective

@dataclass
class LabeledBatch:
    pool: Optional[LabeledPool]
    items: Optional[np.ndarray] = None  # None: every item


@dataclass
class UnlabeledBatch:
    pool: ScenePool
    samples: list = field(default_factory=list)  # (formula, scene, binding) triples


def objective_parts(labeled: LabeledBatch, unlabeled: Optional[UnlabeledBatch], kb: KnowledgeBase,
                    params: Params, config: TrainConfig, tape: Optional[GradTape] = None):
    """The supervised and the reasoning term of the objective, separately."""
    sup = 0.0
    if labeled is not None and labeled.pool is not None and (labeled.items is None or len(labeled.items)):
        sup = labeled.pool.loss(params, labeled.items, tape)
    dr = 0.0
    if config.mode != "supervised" and config.dr_weight > 0:
        if unlabeled is None or not unlabeled.samples:
            raise ValueError(f"{config.mode} mode needs a nonempty unlabeled batch")
        source = SceneMemo(params, unlabeled.pool.scene, tape)
        if config.mode == "unnormalized":
            dr = batch_forall_loss(kb, unlabeled.pool, unlabeled.samples, source, tape)
        else:
            dr = normalized_loss(kb, unlabeled.pool, unlabeled.samples, source, config.mu, tape)
    return sup, dr


def dr_objective(labeled: LabeledBatch, unlabeled: Optional[UnlabeledBatch], kb: KnowledgeBase,
                 params: Params, config: TrainConfig, tape: Optional[GradTape] = None):
    sup, dr = objective_parts(labeled, unlabeled, kb, params, config, tape)
    if config.mode == "supervised" or config.dr_weight == 0:
        return sup
    return sup + config.dr_weight * dr


# --------------------------------------------------------------------------
# optimizer

@dataclass
class OptimizerState:
    acc: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n))


def rmsprop_step(params: Params, gradient: np.ndarray, state: OptimizerState,
                 config: TrainConfig) -> tuple[Params, OptimizerState]:
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != params.theta.shape:
        raise ValueError(f"gradient has shape {g.shape}, parameters {params.theta.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericalAbort(f"non-finite gradient at step {state.step}")
    rho = config.rmsprop_decay
    acc = rho * state.acc + (1.0 - rho) * g * g
    theta = params.theta - config.learning_rate * g / (np.sqrt(acc) + config.rmsprop_epsilon)
    return params.with_theta(theta), OptimizerState(acc, state.step + 1)


# --------------------------------------------------------------------------
# evaluation

def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based ROC AUC; ties get midranks. NaN without both classes."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(params: Params, test_scenes: Sequence[Scene]) -> dict:
    """Type accuracy over softmax groups and AUC over relation atoms."""
    if not test_scenes or any(s.labels is None for s in test_scenes):
        raise ValueError("evaluation needs labeled test scenes")
    arch = params.arch
    correct = n_typed = 0
    scores, labels = [], []
    for s in test_scenes:
        if s.n_objects == 0:
            continue
        for head in arch.heads:
            if head.softmax:
                probs = ad.value(params.head_output(head, s.objects))
                for o in range(s.n_objects):
                    truth = [s.labels.get((name, (o,))) for name in head.members]
                    if truth.count(1) != 1:
                        continue
                    n_typed += 1
                    correct += int(np.argmax(probs[o]) == truth.index(1))
        for p in arch.signature:
            if p.arity < 2:
                continue
            atoms = [(a, v) for a, v in s.labels.items() if a.pred == p.name]
            if not atoms:
                continue
            args = np.array([a.args for a, _ in atoms], dtype=np.int64)
            scores.append(ad.value(params.degrees(p, s, args)))
            labels.append(np.array([v for _, v in atoms]))
    acc = correct / n_typed if n_typed else math.nan
    rel = auc(np.concatenate(scores), np.concatenate(labels)) if scores else math.nan
    return {"type_accuracy": acc, "relation_auc": rel}


# --------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    params: Params
    metrics: list[DiagnosticsRecord]


def _finite(x: float, what: str, step: int) -> float:
    if not math.isfinite(x):
        raise NumericalAbort(f"non-finite {what} at step {step}")
    return x


def train(dataset, kb: KnowledgeBase, config: TrainConfig, arch: Optional[Architecture] = None,
          diagnose: bool = True, on_record: Optional[Callable[[DiagnosticsRecord], None]] = None) -> TrainResult:
    """Minibatch RMSProp on the objective; deterministic given ``config.seed``.

    ``dataset`` needs ``labeled``, ``unlabeled`` and ``test`` scene lists.
    A :class:`DiagnosticsRecord` is produced at step 0, every
    ``config.log_every`` steps and after the last step.
    """
    labeled, unlabeled, test = list(dataset.labeled), list(dataset.unlabeled), list(dataset.test)
    dims = {s.feature_dim for s in labeled + unlabeled + test if s.n_objects}
    if len(dims) > 1:
        raise ValueError(f"inconsistent feature dimensions {sorted(dims)}")
    if arch is None:
        arch = Architecture(kb.signature, dims.pop() if dims else 0)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    params = init_params(arch, int(seeds[0].generate_state(1)[0]))
    state = OptimizerState.zeros(arch.size)
    lab_rng = np.random.default_rng(seeds[1])
    lab_pool = LabeledPool(labeled, kb.signature) if labeled else None
    use_dr = config.mode != "supervised"
    unl_pool = ScenePool(unlabeled) if unlabeled else None
    sampler = TupleSampler(kb, unlabeled, int(seeds[2].generate_state(1)[0])) if use_dr else None
    records: list[DiagnosticsRecord] = []
    has_implication = any(kb.is_implication)
    sup_v = dr_v = None

    def record(step: int):
        rec = DiagnosticsRecord(step, supervised_loss=sup_v, dr_loss=dr_v)
        if diagnose:
            if has_implication and unlabeled:
                rec.avg_d_mp, rec.avg_d_mt = avg_weights(kb, unlabeled, params)
            if test:
                if has_implication:
                    rec.cr_mp, rec.cr_mt, rec.cu_mp, rec.cu_mt = cr_cu_ratios(kb, test, params, seed=config.seed)
                ev = evaluate(params, test)
                rec.type_accuracy, rec.relation_auc = ev["type_accuracy"], ev["relation_auc"]
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    record(0)
    for step in range(1, config.iterations + 1):
        items = None
        if lab_pool is not None and lab_pool.total:
            items = lab_rng.integers(0, lab_pool.total, size=config.batch_size_labeled)
        unl = UnlabeledBatch(unl_pool, sampler.draw(config.batch_size_unlabeled)) if use_dr else None
        tape = GradTape()
        tape.watch(params.theta)
        sup, dr = objective_parts(LabeledBatch(lab_pool, items), unl, kb, params, config, tape)
        objective = sup + config.dr_weight * dr if use_dr else sup
        sup_v = _finite(float(ad.value(sup)), "supervised loss", step)
        dr_v = _finite(float(ad.value(dr)), "reasoning loss", step)
        if isinstance(objective, ad.Node):
            grad = tape.gradient(objective)
        else:
            grad = np.zeros(arch.size)
        params, state = rmsprop_step(params, grad, state, config)
        if step % config.log_every == 0 or step == config.iterations:
            record(step)
    return TrainResult(params, records)

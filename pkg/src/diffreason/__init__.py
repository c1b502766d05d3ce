"""Differentiable reasoning with Product Real Logic on first-order knowledge bases."""
from .fol import (And, Atom, Constant, Forall, Formula, Implies, KnowledgeBase, Not, Or, ParseError,
                  PredicateSig, Variable, Violation, format_formula, format_kb, load_kb, parse_kb, prenex,
                  validate)
from .grounding import (GroundAtom, HerbrandBase, Scene, TupleSampler, World, enumerate_bindings,
                        herbrand_base, read_scenes, sample_batch, write_scenes)
from .model import (Architecture, DegreeTable, Params, init_params, load_checkpoint, params_from_table, predict,
                    save_checkpoint)
from .oracle import check_prl_exactness, exact_kb_probability, valuation, world_probability
from .prl import EPS, evaluate, forall_loss, mp_mt_weights, normalized_loss
from .diagnostics import DiagnosticsRecord, avg_weights, cr_cu_ratios, emit_csv
from .synth import GeneratedDataset, SynthConfig, default_kb, generate, read_dataset, write_dataset
from .train import TrainConfig, TrainResult, dr_objective, rmsprop_step, supervised_loss, train

__version__ = "0.1.0"

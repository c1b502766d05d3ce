"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 input or validation error,
3 numerical abort.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .diagnostics import DiagnosticsRecord, avg_weights, cr_cu_ratios, emit_csv
from .fol import KnowledgeBase, ParseError, format_formula, format_kb, load_kb, prenex, validate
from .grounding import DatasetFormatError, Scene, read_scenes
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .oracle import BaseTooLargeError, check_prl_exactness
from .prl import degrees, forall_loss
from .synth import GeneratedDataset, SynthConfig, default_kb, generate, read_dataset, write_dataset
from .train import NumericalAbort, TrainConfig, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(Exception):
    """Bad input file or inconsistent inputs (exit code 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diffreason", description="Differentiable reasoning on first-order knowledge bases.")
    parser.add_argument("--quiet", action="store_true", help="machine-readable output only")
    parser.add_argument("--threads", type=_positive_int, default=None,
                        help="cap on worker threads (default: $DR_THREADS, else 1)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a knowledge-base file")
    p.add_argument("--kb", required=True)

    p = sub.add_parser("eval", help="per-formula degrees and forall losses")
    p.add_argument("--kb", required=True)
    p.add_argument("--data", required=True, help="scene file or dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--binding", action="append", default=[],
                   help="VAR=OBJ pairs, comma separated or repeated, e.g. x=0,y=1")

    p = sub.add_parser("oracle-check", help="compare exact KB probability with the product-logic degree")
    p.add_argument("--kb", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="SynthConfig file (default: built-in defaults)")
    p.add_argument("--kb", help="knowledge base (default: built-in part/whole rules)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train and write checkpoint plus metrics CSV")
    p.add_argument("--kb", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="TrainConfig file (default: built-in defaults)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose", help="diagnostics of a checkpoint as a one-row CSV")
    p.add_argument("--kb", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    return parser


# --------------------------------------------------------------------------
# input helpers

def _load_kb(path) -> KnowledgeBase:
    try:
        kb = load_kb(path)
    except OSError as e:
        raise InputError(f"{path}: {e.strerror}") from None
    except ParseError as e:
        raise InputError(f"{path}: {e}") from None
    problems = validate(kb)
    if problems:
        raise InputError(f"{path}: {problems[0].kind}: {problems[0].message}")
    return kb


def _load_scenes(path) -> list[Scene]:
    path = Path(path)
    try:
        if path.is_dir():
            ds = read_dataset(path)
            return ds.labeled + ds.unlabeled + ds.test
        scenes, _ = read_scenes(path)
        return scenes
    except OSError as e:
        raise InputError(f"{path}: {e.strerror}") from None
    except (DatasetFormatError, ValueError) as e:
        raise InputError(f"{path}: {e}") from None


def _load_dataset(path) -> GeneratedDataset:
    path = Path(path)
    if not path.is_dir():
        raise InputError(f"{path}: not a dataset directory")
    try:
        return read_dataset(path)
    except (DatasetFormatError, ValueError) as e:
        raise InputError(f"{path}: {e}") from None


def _load_params(path, kb: KnowledgeBase):
    try:
        params = load_checkpoint(path)
    except OSError as e:
        raise InputError(f"{path}: {e.strerror}") from None
    except (CheckpointError, ValueError) as e:
        raise InputError(str(e)) from None
    if {p.name: (p.arity, p.group) for p in params.arch.signature} != \
            {p.name: (p.arity, p.group) for p in kb.signature}:
        raise InputError(f"{path}: checkpoint signature does not match the knowledge base")
    return params


def _parse_binding(items: Sequence[str]) -> dict[str, int]:
    out: dict[str, int] = {}
    for item in items:
        for part in item.split(","):
            part = part.strip()
            if not part:
                continue
            var, sep, obj = part.partition("=")
            if not sep or not var.strip() or not obj.strip().isdigit():
                raise InputError(f"bad binding {part!r}; expected VAR=OBJECT_INDEX")
            out[var.strip()] = int(obj)
    return out


def _check_dims(scenes: Sequence[Scene], params) -> None:
    for s in scenes:
        if s.n_objects and s.feature_dim != params.arch.feature_dim:
            raise InputError(f"scene {s.scene_id!r} has feature dimension {s.feature_dim}, "
                             f"checkpoint expects {params.arch.feature_dim}")


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


# --------------------------------------------------------------------------
# commands

def cmd_validate(args, out) -> int:
    try:
        kb = load_kb(args.kb)
    except OSError as e:
        raise InputError(f"{args.kb}: {e.strerror}") from None
    except ParseError as e:
        print(f"{args.kb}: {e}", file=out)
        return EXIT_INPUT
    problems = validate(kb)
    for v in problems:
        print(f"{args.kb}: {v.kind}: {v.message}", file=out)
    return EXIT_INPUT if problems else EXIT_OK


def cmd_eval(args, out) -> int:
    kb = _load_kb(args.kb)
    scenes = _load_scenes(args.data)
    params = _load_params(args.checkpoint, kb)
    _check_dims(scenes, params)
    binding = _parse_binding(args.binding)
    for fi, f in enumerate(kb.formulas):
        if not args.quiet:
            print(f"# formula {fi}: {format_formula(f)}", file=out)
        print(f"loss\t{fi}\t{_fmt(forall_loss(f, scenes, params))}", file=out)
        if not binding:
            continue
        variables, body = prenex(f)
        missing = [v for v in variables if v not in binding]
        if missing:
            continue  # the binding does not cover this formula
        row = np.array([[binding[v] for v in variables]], dtype=np.int64)
        label = ",".join(f"{v}={binding[v]}" for v in variables)
        for s in scenes:
            if variables and row.max() >= s.n_objects:
                raise InputError(f"binding {label} out of range for scene {s.scene_id!r}")
            p = float(np.asarray(degrees(body, variables, s, row, params))[0])
            print(f"degree\t{fi}\t{s.scene_id}\t{label}\t{_fmt(p)}", file=out)
    return EXIT_OK


def cmd_oracle_check(args, out) -> int:
    kb = _load_kb(args.kb)
    scenes = _load_scenes(args.data)
    params = _load_params(args.checkpoint, kb)
    _check_dims(scenes, params)
    ok = True
    for s in scenes:
        try:
            report = check_prl_exactness(kb, s, params)
        except BaseTooLargeError as e:
            raise InputError(f"scene {s.scene_id!r}: {e}") from None
        print(report.to_json(), file=out)
        ok = ok and report.ok
    return EXIT_OK if ok else EXIT_INPUT


def cmd_synth(args, out) -> int:
    try:
        config = SynthConfig.load(args.config) if args.config else SynthConfig()
    except OSError as e:
        raise InputError(f"{args.config}: {e.strerror}") from None
    except ValueError as e:
        raise InputError(f"{args.config}: {e}") from None
    kb = _load_kb(args.kb) if args.kb else default_kb()
    try:
        ds = generate(config, kb)
    except ValueError as e:
        raise InputError(str(e)) from None
    write_dataset(args.out, ds)
    Path(args.out, "kb.txt").write_text(format_kb(kb), encoding="utf-8")
    if not args.quiet:
        print(f"wrote {len(ds.labeled)} labeled, {len(ds.unlabeled)} unlabeled and "
              f"{len(ds.test)} test scenes to {args.out}", file=out)
    return EXIT_OK


def cmd_train(args, out) -> int:
    kb = _load_kb(args.kb)
    ds = _load_dataset(args.data)
    try:
        config = TrainConfig.load(args.config) if args.config else TrainConfig()
    except OSError as e:
        raise InputError(f"{args.config}: {e.strerror}") from None
    except ValueError as e:
        raise InputError(f"{args.config}: {e}") from None
    try:
        result = train(ds, kb, config)
    except NumericalAbort:
        raise
    except ValueError as e:
        raise InputError(str(e)) from None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "checkpoint.bin", result.params)
    emit_csv(result.metrics, out_dir / "metrics.csv")
    if not args.quiet:
        last = result.metrics[-1]
        print(f"trained {config.iterations} steps ({config.mode}); "
              f"type_accuracy={last.type_accuracy} relation_auc={last.relation_auc}", file=out)
    return EXIT_OK


def cmd_diagnose(args, out) -> int:
    kb = _load_kb(args.kb)
    ds = _load_dataset(args.data)
    params = _load_params(args.checkpoint, kb)
    _check_dims(ds.labeled + ds.unlabeled + ds.test, params)
    rec = DiagnosticsRecord(0)
    try:
        if any(kb.is_implication) and ds.unlabeled:
            rec.avg_d_mp, rec.avg_d_mt = avg_weights(kb, ds.unlabeled, params)
        if ds.test:
            if any(kb.is_implication):
                rec.cr_mp, rec.cr_mt, rec.cu_mp, rec.cu_mt = cr_cu_ratios(kb, ds.test, params)
            ev = evaluate(params, ds.test)
            rec.type_accuracy, rec.relation_auc = ev["type_accuracy"], ev["relation_auc"]
    except ValueError as e:
        raise InputError(str(e)) from None
    emit_csv([rec], args.out)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "eval": cmd_eval,
    "oracle-check": cmd_oracle_check,
    "synth": cmd_synth,
    "train": cmd_train,
    "diagnose": cmd_diagnose,
}


def _thread_limit(requested: Optional[int]) -> int:
    if requested is not None:
        return requested
    env = os.environ.get("DR_THREADS")
    if env is None:
        return 1
    try:
        value = int(env)
    except ValueError:
        raise InputError(f"DR_THREADS must be a positive integer, got {env!r}") from None
    if value < 1:
        raise InputError(f"DR_THREADS must be a positive integer, got {env!r}")
    return value


def run(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    try:
        limiter = threadpool_limits(limits=_thread_limit(args.threads))
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    with limiter:
        try:
            return COMMANDS[args.command](args, out)
        except InputError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_INPUT
        except (NumericalAbort, FloatingPointError) as e:
            print(f"numerical abort: {e}", file=sys.stderr)
            return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())

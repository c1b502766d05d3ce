import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from diffreason.cli import run
from diffreason.grounding import Scene, write_scenes
from diffreason.model import save_checkpoint
from diffreason.synth import SynthConfig, default_kb, generate, part_whole_kb_text, write_dataset

from conftest import CHAIR_KB


def call(*argv):
    out = io.StringIO()
    code = run(list(argv), out)
    return code, out.getvalue()


@pytest.fixture
def chair_files(tmp_path, chair):
    (tmp_path / "kb.txt").write_text(CHAIR_KB)
    write_scenes(tmp_path / "scene.jsonl", [chair.scene], 2)
    save_checkpoint(tmp_path / "ckpt.bin", chair.params)
    return tmp_path


@pytest.fixture
def small_data(tmp_path):
    (tmp_path / "kb.txt").write_text(part_whole_kb_text())
    ds = generate(SynthConfig(n_labeled_scenes=2, n_unlabeled_scenes=4, n_test_scenes=3), default_kb())
    write_dataset(tmp_path / "data", ds)
    (tmp_path / "train.cfg").write_text("mode = normalized\niterations = 6\nlog_every = 3\n"
                                        "batch_size_unlabeled = 16\nseed = 5\n")
    return tmp_path


def test_validate_clean_rules(tmp_path):
    (tmp_path / "kb.txt").write_text(part_whole_kb_text())
    assert call("validate", "--kb", str(tmp_path / "kb.txt")) == (0, "")


def test_validate_reports_problems(tmp_path):
    (tmp_path / "bad.txt").write_text("pred p/1;\nforall x: p(y)\n")
    code, text = call("validate", "--kb", str(tmp_path / "bad.txt"))
    assert code == 2 and "line 2" in text and "unbound variable y" in text
    code, _ = call("validate", "--kb", str(tmp_path / "missing.txt"))
    assert code == 2


def test_eval_chair_binding(chair_files, chair):
    code, text = call("--quiet", "eval", "--kb", str(chair_files / "kb.txt"), "--data",
                      str(chair_files / "scene.jsonl"), "--checkpoint", str(chair_files / "ckpt.bin"),
                      "--binding", "x=0,y=1")
    assert code == 0
    rows = [line.split("\t") for line in text.splitlines()]
    assert all(not line.startswith("#") for line in text.splitlines())
    loss = [r for r in rows if r[0] == "loss"][0]
    degree = [r for r in rows if r[0] == "degree"][0]
    assert degree[1:4] == ["0", "example", "x=0,y=1"]
    assert float(degree[4]) == pytest.approx(0.61525, abs=1e-5)
    assert float(loss[2]) == pytest.approx(chair.loss_by_hand, abs=1e-8)


def test_eval_without_quiet_prints_formulas(chair_files):
    code, text = call("eval", "--kb", str(chair_files / "kb.txt"), "--data", str(chair_files / "scene.jsonl"),
                      "--checkpoint", str(chair_files / "ckpt.bin"))
    assert code == 0 and text.startswith("# formula 0: forall x,y:")


def test_eval_bad_binding(chair_files):
    code, _ = call("eval", "--kb", str(chair_files / "kb.txt"), "--data", str(chair_files / "scene.jsonl"),
                   "--checkpoint", str(chair_files / "ckpt.bin"), "--binding", "x=0,y=7")
    assert code == 2


def test_oracle_check(chair_files):
    (chair_files / "one.txt").write_text("pred chair/1 @types; pred cushion/1 @types; pred armRest/1 @types; "
                                         "pred partOf/2;\nforall x: chair(x) -> cushion(x)\n")
    code, text = call("oracle-check", "--kb", str(chair_files / "one.txt"), "--data",
                      str(chair_files / "scene.jsonl"), "--checkpoint", str(chair_files / "ckpt.bin"))
    report = json.loads(text)
    assert code == 0 and report["assumptions_hold"] and report["abs_diff"] < 1e-9
    # the two-variable rule reuses chair(a) across y, so the premises fail; still exit 0
    code, text = call("oracle-check", "--kb", str(chair_files / "kb.txt"), "--data",
                      str(chair_files / "scene.jsonl"), "--checkpoint", str(chair_files / "ckpt.bin"))
    assert code == 0 and json.loads(text)["assumptions_hold"] is False


def test_checkpoint_signature_mismatch(chair_files, tmp_path):
    (tmp_path / "other.txt").write_text("pred p/1;\nforall x: p(x)\n")
    code, _ = call("eval", "--kb", str(tmp_path / "other.txt"), "--data", str(chair_files / "scene.jsonl"),
                   "--checkpoint", str(chair_files / "ckpt.bin"))
    assert code == 2


def test_usage_errors():
    assert call("frobnicate")[0] == 1
    assert call("validate")[0] == 1
    assert call("--threads", "0", "validate", "--kb", "x")[0] == 1


def test_synth_train_diagnose(small_data, tmp_path):
    cfg = tmp_path / "synth.cfg"
    cfg.write_text("n_labeled_scenes = 2\nn_unlabeled_scenes = 3\nn_test_scenes = 2\n")
    code, text = call("--quiet", "synth", "--config", str(cfg), "--out", str(tmp_path / "gen"))
    assert code == 0 and text == ""
    assert (tmp_path / "gen" / "kb.txt").exists() and (tmp_path / "gen" / "test.jsonl").exists()

    args = ["--kb", str(small_data / "kb.txt"), "--data", str(small_data / "data"),
            "--config", str(small_data / "train.cfg")]
    assert call("--quiet", "train", *args, "--out", str(tmp_path / "r1")) == (0, "")
    assert call("--quiet", "train", *args, "--out", str(tmp_path / "r2"))[0] == 0
    for name in ("metrics.csv", "checkpoint.bin"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    lines = (tmp_path / "r1" / "metrics.csv").read_text().splitlines()
    assert lines[0].startswith("iteration,avg_d_mp") and [l.split(",")[0] for l in lines[1:]] == ["0", "3", "6"]

    code, _ = call("diagnose", "--kb", str(small_data / "kb.txt"), "--data", str(small_data / "data"),
                   "--checkpoint", str(tmp_path / "r1" / "checkpoint.bin"), "--out", str(tmp_path / "d.csv"))
    assert code == 0
    row = (tmp_path / "d.csv").read_text().splitlines()[1].split(",")
    assert row[0] == "0" and all(cell != "" for cell in row[1:7])


def test_train_bad_config(small_data, tmp_path):
    (tmp_path / "bad.cfg").write_text("mode = sideways\n")
    code, _ = call("train", "--kb", str(small_data / "kb.txt"), "--data", str(small_data / "data"),
                   "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path / "r"))
    assert code == 2


def test_train_numerical_abort(small_data, tmp_path):
    data = tmp_path / "nan"
    write_dataset(data, generate(SynthConfig(n_labeled_scenes=1, n_unlabeled_scenes=1, n_test_scenes=0),
                                 default_kb()))
    text = (data / "labeled.jsonl").read_text().splitlines()
    rec = json.loads(text[1])
    rec["objects"][0][0] = math.nan
    text[1] = json.dumps(rec)
    (data / "labeled.jsonl").write_text("\n".join(text) + "\n")
    (tmp_path / "t.cfg").write_text("iterations = 3\nbatch_size_labeled = 500\n")
    code, _ = call("train", "--kb", str(small_data / "kb.txt"), "--data", str(data), "--config",
                   str(tmp_path / "t.cfg"), "--out", str(tmp_path / "r"))
    assert code == 3


def test_threads_from_environment(chair_files, monkeypatch):
    monkeypatch.setenv("DR_THREADS", "two")
    assert call("validate", "--kb", str(chair_files / "kb.txt"))[0] == 2
    monkeypatch.setenv("DR_THREADS", "2")
    assert call("validate", "--kb", str(chair_files / "kb.txt"))[0] == 0


def test_module_entry_point(tmp_path):
    (tmp_path / "kb.txt").write_text(part_whole_kb_text())
    proc = subprocess.run([sys.executable, "-m", "diffreason", "validate", "--kb", str(tmp_path / "kb.txt")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == ""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffreason import autodiff as ad
from diffreason.autodiff import GradTape, TapeError
from diffreason.fol import PredicateSig
from diffreason.grounding import GroundAtom, Scene
from diffreason.model import (Architecture, CheckpointError, Params, SceneMemo, gradient, init_params,
                              load_checkpoint, params_from_table, predict, save_checkpoint)

SIG = (PredicateSig("a", 1, "t"), PredicateSig("b", 1, "t"), PredicateSig("c", 1, "t"),
       PredicateSig("r", 2), PredicateSig("u", 1))


def central_diff(f, theta, eps=1e-5):
    g = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = eps
        g[j] = (f(theta + e) - f(theta - e)) / (2 * eps)
    return g


def test_zero_weights():
    arch = Architecture(SIG, 4)
    params = Params(arch, np.zeros(arch.size))
    x = np.ones(4)
    assert predict(SIG[4], [x], params) == 0.5
    assert predict(SIG[3], [x, x], params) == 0.5
    for p in SIG[:3]:
        assert predict(p, [x], params) == pytest.approx(1 / 3, abs=1e-15)


def test_linear_unit_without_hidden_layer():
    p = PredicateSig("u", 1)
    arch = Architecture([p], 2, {"u": 0})
    params = Params(arch, np.array([1.0, -1.0, 0.0]))
    assert predict(p, [np.array([2.0, 1.0])], params) == pytest.approx(0.73106, abs=1e-5)
    assert predict(p, [np.array([2.0, 1.0])], params) == pytest.approx(1 / (1 + np.exp(-1.0)), abs=1e-15)


def test_dimension_mismatch():
    params = init_params(Architecture(SIG, 3), 0)
    with pytest.raises(ValueError):
        predict(SIG[4], [np.ones(4)], params)
    with pytest.raises(ValueError):
        predict(SIG[3], [np.ones(3)], params)


def test_layout_tiles_theta():
    arch = Architecture(SIG, 3, {"t": 4, "r": 2, "u": 0})
    spans = sorted((s.start, s.stop) for entries in arch.layout.values() for s, _ in entries.values())
    assert spans[0][0] == 0 and spans[-1][1] == arch.size
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
    assert arch.widths == {"t": 4, "r": 2, "u": 0}
    default = Architecture(SIG, 3)
    assert default.widths == {"t": 10, "r": 2, "u": 10}


def test_init_is_seeded_and_bounded():
    arch = Architecture(SIG, 5)
    a, b = init_params(arch, 3), init_params(arch, 3)
    assert np.array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, init_params(arch, 4).theta)
    s, _ = arch.layout["r"]["w1"]
    assert np.all(np.abs(a.theta[s]) <= 1 / np.sqrt(10))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_outputs_are_probabilities(seed):
    rng = np.random.default_rng(seed)
    arch = Architecture(SIG, 3, {"t": int(rng.integers(0, 4)), "r": 2, "u": 1})
    params = init_params(arch, seed)
    params = params.with_theta(params.theta * rng.uniform(1, 20))
    x = rng.normal(size=3) * 5
    group = [predict(p, [x], params) for p in SIG[:3]]
    assert abs(sum(group) - 1.0) < 1e-12
    assert all(0.0 <= v <= 1.0 for v in group + [predict(SIG[3], [x, x], params), predict(SIG[4], [x], params)])


def test_gradient_passthrough_and_constant():
    tape = GradTape()
    theta = tape.watch(np.array([0.3, -1.2, 2.0]))
    assert np.array_equal(gradient(tape, theta[1]), [0.0, 1.0, 0.0])
    const = tape.constant(5.0)
    assert np.array_equal(gradient(tape, const), np.zeros(3))
    # repeated use accumulates
    assert np.allclose(gradient(tape, theta[0] * theta[0] + theta[0]), [1.6, 0.0, 0.0])


def test_gradient_errors():
    tape, other = GradTape(), GradTape()
    other.watch(np.zeros(2))
    x = other.constant(1.0)
    with pytest.raises(TapeError):
        tape.gradient(x)
    with pytest.raises(TapeError):
        other.gradient(other.constant(np.ones(2)))


def test_predict_gradient_matches_finite_differences(rng):
    worst = 0.0
    for trial in range(100):
        arch = Architecture(SIG, 3, {"t": 3, "r": 2, "u": 2})
        params = init_params(arch, trial)
        params = params.with_theta(params.theta * rng.uniform(0.5, 3.0))
        pred = SIG[int(rng.integers(0, len(SIG)))]
        objs = [rng.normal(size=3) for _ in range(pred.arity)]
        tape = GradTape()
        g = gradient(tape, predict(pred, objs, params, tape))
        fd = central_diff(lambda th: predict(pred, objs, params.with_theta(th)), params.theta)
        scale = max(np.abs(fd).max(), 1e-8)
        worst = max(worst, np.abs(g - fd).max() / scale)
    assert worst < 1e-5


def test_softmax_and_log_softmax_gradients(rng):
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    for op in (ad.softmax, ad.log_softmax):
        def f(v):
            return float((ad.value(op(v.reshape(3, 4))) * w).sum())
        tape = GradTape()
        node = tape.watch(x.reshape(-1))
        g = tape.gradient(ad.total(op(ad.reshape(node, (3, 4))) * w))
        assert np.allclose(g, central_diff(f, x.reshape(-1)), atol=1e-8)


def test_continuity(rng):
    params = init_params(Architecture(SIG, 3), 1)
    x = [rng.normal(size=3)]
    base = predict(SIG[0], x, params)
    for scale in (1e-3, 1e-6, 1e-9):
        moved = params.with_theta(params.theta + scale * rng.normal(size=params.theta.size))
        assert abs(predict(SIG[0], x, moved) - base) < 100 * scale


def test_scene_memo_matches_direct(rng):
    params = init_params(Architecture(SIG, 3), 2)
    scene = Scene("s", rng.normal(size=(5, 3)))
    memo = SceneMemo(params, scene)
    args = rng.integers(0, 5, size=(7, 1))
    for p in (SIG[1], SIG[4]):
        assert np.allclose(memo.degrees(p, scene, args), params.degrees(p, scene, args), atol=1e-15)
    pairs = rng.integers(0, 5, size=(7, 2))
    assert np.array_equal(memo.degrees(SIG[3], scene, pairs), params.degrees(SIG[3], scene, pairs))


def test_table_params_reproduce_degrees(chair):
    for atom, v in [(GroundAtom("chair", (0,)), 0.9), (GroundAtom("partOf", (1, 0)), 0.95),
                    (GroundAtom("cushion", (1,)), 0.5), (GroundAtom("partOf", (0, 0)), 0.001)]:
        pred = chair.kb.predicate(atom.pred)
        got = chair.params.degrees(pred, chair.scene, np.array([atom.args]))[0]
        assert got == pytest.approx(v, abs=1e-12)


def test_table_params_reject_bad_degrees():
    p = PredicateSig("u", 1)
    with pytest.raises(ValueError):
        params_from_table([p], {GroundAtom("u", (0,)): 1.0}, 1)


def test_checkpoint_round_trip(tmp_path, rng):
    arch = Architecture(SIG, 3, {"t": 4, "r": 0})
    params = init_params(arch, 9).with_theta(rng.normal(size=arch.size) * 1e3)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, params)
    back = load_checkpoint(path)
    assert back.arch == arch
    assert back.theta.tobytes() == params.theta.tobytes()
    save_checkpoint(tmp_path / "again.bin", back)
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_checkpoint_corrupt(tmp_path):
    params = init_params(Architecture(SIG, 2), 0)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, params)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(b"garbage\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)

import numpy as np
import pytest

from cclfp.autodiff import ShapeError, Tape
from cclfp.buffer import MemoryBuffer
from cclfp.data import build_synthetic
from cclfp.model import (ExtractorParams, HeadParams, ModelState, ProtocolError, bind, classify, embed,
                         load_checkpoint, save_checkpoint, sgd_step, snapshot, state_arrays)
from cclfp.trainer import TrainConfig, init_state, train_task


def test_zero_weights_give_zero_embeddings():
    p = ExtractorParams.init(np.random.default_rng(0), 6, (4, 3))
    for a in p.arrays():
        a[:] = 0
    assert np.array_equal(embed(p, np.random.default_rng(1).normal(size=(5, 6))), np.zeros((5, 3)))


def test_identity_single_layer_passes_input_through():
    p = ExtractorParams([np.eye(4)], [np.zeros((1, 4))])
    x = np.random.default_rng(0).uniform(0, 1, size=(3, 4))
    assert np.array_equal(embed(p, x), x)


def test_forward_matches_hand_rolled_loops():
    rng = np.random.default_rng(2)
    p = ExtractorParams.init(rng, 5, (4, 3))
    for b in p.biases:
        b += rng.normal(size=b.shape)
    x = rng.normal(size=(2, 5))
    expected = []
    for row in x.tolist():
        h = row
        for w, b in zip(p.weights, p.biases):
            h = [max(0.0, sum(h[i] * w[i][j] for i in range(len(h))) + b[0][j]) for j in range(w.shape[1])]
        expected.append(h)
    assert np.allclose(embed(p, x), expected, atol=1e-12, rtol=0)
    t = Tape()
    bm = bind(t, ModelState(p, HeadParams.single(rng, 3, 2)))
    assert np.allclose(bm.embed(x).value, expected, atol=1e-12, rtol=0)


def test_embed_shape_error():
    p = ExtractorParams.init(np.random.default_rng(0), 5, (3,))
    with pytest.raises(ShapeError):
        embed(p, np.ones((2, 4)))


def test_classify_zero_head():
    head = HeadParams.single(np.random.default_rng(0), 3, 4)
    head.weights[0][:] = 0
    assert np.array_equal(classify(head, np.ones((2, 3))), np.zeros((2, 4)))


def test_multi_head_isolation_and_errors():
    rng = np.random.default_rng(0)
    head = HeadParams("multi")
    head.add_task_head(rng, 3, 2)
    head.add_task_head(rng, 3, 2)
    e = rng.normal(size=(2, 3))
    assert not np.array_equal(classify(head, e, 0), classify(head, e, 1))
    head.weights[1][:] = 0
    head.biases[1][:] = 0
    assert np.array_equal(classify(head, e, 1), np.zeros((2, 2)))
    with pytest.raises(ProtocolError):
        classify(head, e)
    with pytest.raises(ProtocolError):
        classify(head, e, 2)


def test_single_head_width_covers_all_classes():
    head = HeadParams.single(np.random.default_rng(0), 100, 10)
    for task in range(5):
        assert classify(head, np.ones((1, 100)), task).shape == (1, 10)


def test_snapshot_is_a_deep_copy():
    rng = np.random.default_rng(0)
    p = ExtractorParams.init(rng, 4, (3,))
    before = [a.copy() for a in p.arrays()]
    snap = snapshot(p)
    sgd_step(p.arrays(), [np.ones_like(a) for a in p.arrays()], 0.1)
    assert all(np.array_equal(a, b) for a, b in zip(snap.params.arrays(), before))
    assert not np.array_equal(snap.params.weights[0], p.weights[0])
    again = snapshot(snap)
    assert all(np.array_equal(a, b) for a, b in zip(again.params.arrays(), snap.params.arrays()))


def test_snapshot_untouched_by_training_and_constant_within_task(monkeypatch):
    stream = build_synthetic(3, 2, 40, width=8, seed=0)
    cfg = TrainConfig(method="ccl-fp+", hidden=(8, 6), buffer_capacity=20, seed=1)
    state = init_state(stream, cfg)
    train_task(state, stream, 0, cfg)
    frozen = [a.copy() for a in state.snapshot.params.arrays()]
    assert all(np.array_equal(a, b) for a, b in zip(frozen, state.model.extractor.arrays()))
    probe = stream.tasks[1].train.x[:3]
    seen = []
    from cclfp import trainer
    orig = trainer.train_step

    def spy(state_, *a, **k):
        seen.append(embed(state_.snapshot.params, probe).tobytes())
        return orig(state_, *a, **k)

    monkeypatch.setattr(trainer, "train_step", spy)
    snap_obj = state.snapshot
    train_task(state, stream, 1, cfg)
    assert len(set(seen)) == 1
    assert all(np.array_equal(a, b) for a, b in zip(frozen, snap_obj.params.arrays()))


def test_task_il_updates_only_current_head():
    stream = build_synthetic(2, 2, 30, width=6, seed=0, scenario="task-il")
    cfg = TrainConfig(method="er", hidden=(5,), buffer_capacity=10, seed=0)
    state = init_state(stream, cfg)
    train_task(state, stream, 0, cfg)
    head0 = [state.model.head.weights[0].copy(), state.model.head.biases[0].copy()]
    train_task(state, stream, 1, cfg)
    assert np.array_equal(state.model.head.weights[0], head0[0])
    assert np.array_equal(state.model.head.biases[0], head0[1])
    assert state.model.head.n_heads == 2


def test_init_is_deterministic():
    a = ExtractorParams.init(np.random.default_rng(4), 10, (5, 5))
    b = ExtractorParams.init(np.random.default_rng(4), 10, (5, 5))
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


def test_glorot_bounds():
    p = ExtractorParams.init(np.random.default_rng(0), 784, (100,))
    assert np.abs(p.weights[0]).max() <= np.sqrt(6 / 884)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ext = ExtractorParams.init(rng, 6, (5, 4))
    head = HeadParams("multi")
    head.add_task_head(rng, 4, 2)
    head.add_task_head(rng, 4, 2)
    state = ModelState(ext, head)
    buf = MemoryBuffer(3, seed=1)
    for i in range(7):
        buf.offer(rng.normal(size=6), i % 2, i // 3)
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, state, snapshot(ext), buf)
    state2, snap2, buf_state = load_checkpoint(path)
    for a, b in zip(state_arrays(state), state_arrays(state2)):
        assert a.tobytes() == b.tobytes()
    assert snap2.valid and snap2.params.weights[1].tobytes() == ext.weights[1].tobytes()
    buf2 = MemoryBuffer.from_state(buf_state)
    assert buf2.seen == 7 and np.array_equal(buf2.inputs, buf.inputs)
    assert np.array_equal(buf2.sample(2)[0], buf.sample(2)[0])


def test_sgd_shape_error():
    with pytest.raises(ShapeError):
        sgd_step([np.zeros((2, 2))], [np.zeros((2, 1))], 0.1)

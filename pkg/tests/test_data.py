import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cclfp.data import (IngestionError, LabeledSet, StreamConfigError, build_permuted, build_rotated,
                        build_split, build_synthetic, load_idx, rotate_images, stream_digest,
                        to_local_labels, to_source_labels, write_idx)
from cclfp.metrics import forgetting
from cclfp.trainer import TrainConfig, run_scenario


@pytest.fixture
def fixture_pair(tmp_path):
    pixels = np.array([[[0, 255], [128, 1]], [[7, 0], [254, 64]]], dtype=np.uint8)
    img, lab = tmp_path / "img", tmp_path / "lab"
    img.write_bytes(struct.pack(">IIII", 2051, 2, 2, 2) + pixels.tobytes())
    lab.write_bytes(struct.pack(">II", 2049, 2) + bytes([3, 9]))
    return img, lab, pixels


def test_idx_fixture_exact_values(fixture_pair):
    img, lab, pixels = fixture_pair
    s = load_idx(img, lab)
    assert s.x.shape == (2, 4)
    assert np.array_equal(s.x, pixels.reshape(2, 4) / 255.0)
    assert s.y.tolist() == [3, 9]


def test_idx_write_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(5, 3, 4), dtype=np.uint8)
    write_idx(imgs, [1, 2, 3, 4, 5], tmp_path / "i", tmp_path / "l")
    s = load_idx(tmp_path / "i", tmp_path / "l")
    assert np.array_equal(np.rint(s.x * 255).astype(np.uint8), imgs.reshape(5, 12))


def test_bad_magic_names_offset(fixture_pair, tmp_path):
    img, lab, _ = fixture_pair
    raw = bytearray(img.read_bytes())
    raw[3] = 0x01
    bad = tmp_path / "bad"
    bad.write_bytes(bytes(raw))
    with pytest.raises(IngestionError, match="offset 0"):
        load_idx(bad, lab)


def test_truncated_pixels(fixture_pair, tmp_path):
    img, lab, _ = fixture_pair
    short = tmp_path / "short"
    short.write_bytes(img.read_bytes()[:-3])
    with pytest.raises(IngestionError, match="offset 21"):
        load_idx(short, lab)


def test_truncated_header(tmp_path, fixture_pair):
    _, lab, _ = fixture_pair
    (tmp_path / "h").write_bytes(b"\x00\x00\x08")
    with pytest.raises(IngestionError, match="offset"):
        load_idx(tmp_path / "h", lab)


def test_count_mismatch(fixture_pair, tmp_path):
    img, _, _ = fixture_pair
    lab = tmp_path / "lab3"
    lab.write_bytes(struct.pack(">II", 2049, 3) + bytes([1, 2, 3]))
    with pytest.raises(IngestionError, match="does not match"):
        load_idx(img, lab)


def test_real_mnist_shape(mnist):
    train, test = mnist
    assert train.x.shape == (60000, 784) and test.x.shape == (10000, 784)
    assert train.x.min() == 0.0 and train.x.max() == 1.0
    assert set(np.unique(train.y)) == set(range(10))


# split


def tiny_source(n=200, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledSet(rng.uniform(size=(n, 9)), rng.integers(0, 10, n))


def test_split_first_task_is_zero_one(mnist):
    stream = build_split(*mnist)
    assert set(np.unique(stream.tasks[0].train.y)) == {0, 1}
    assert set(np.unique(stream.tasks[0].test.y)) == {0, 1}
    assert len(stream) == 5 and stream.n_classes == 10


def test_split_partitions_source():
    train, test = tiny_source(), tiny_source(50, 1)
    stream = build_split(train, test)
    assert sum(len(t.train) for t in stream.tasks) == len(train)
    rows = np.concatenate([t.train.x for t in stream.tasks])
    assert sorted(map(bytes, rows)) == sorted(map(bytes, train.x))
    label_sets = [set(t.train.y.tolist()) for t in stream.tasks]
    for i in range(5):
        for j in range(i + 1, 5):
            assert not label_sets[i] & label_sets[j]


def test_task_il_relabel_round_trip():
    train, test = tiny_source(), tiny_source(50, 1)
    cls = build_split(train, test, scenario="class-il")
    til = build_split(train, test, scenario="task-il")
    assert til.n_classes == 2
    for k, (a, b) in enumerate(zip(cls.tasks, til.tasks)):
        assert set(b.train.y.tolist()) <= {0, 1}
        assert np.array_equal(to_source_labels(b.train.y, b.classes), a.train.y)
        assert np.array_equal(b.train.y, a.train.y - 2 * k)


@given(st.permutations(range(10)), st.lists(st.integers(0, 9), min_size=1, max_size=30))
def test_local_labels_invert(order, ys):
    group = tuple(order)
    y = np.array(ys)
    assert np.array_equal(to_source_labels(to_local_labels(y, group), group), y)


def test_overlapping_pairs_rejected():
    with pytest.raises(StreamConfigError):
        build_split(tiny_source(), tiny_source(), pairs=((0, 1), (1, 2)))


def test_split_rejects_domain_scenario():
    with pytest.raises(StreamConfigError):
        build_split(tiny_source(), tiny_source(), scenario="domain-il")


# permuted / rotated


def test_permuted_shape_and_bijection(mnist):
    stream = build_permuted(*mnist, seed=3)
    assert len(stream) == 20
    assert all(len(t.train) == 1000 and len(t.test) == 1000 for t in stream.tasks)
    assert stream.scenario == "domain-il"
    for p in stream.transforms:
        assert np.array_equal(np.sort(p), np.arange(784))
    assert np.array_equal(stream.transforms[0], np.arange(784))
    assert all(set(np.unique(t.train.y)) == set(range(10)) for t in stream.tasks)


def test_identity_task_leaves_pixels():
    train, test = tiny_source(100), tiny_source(40, 1)
    stream = build_permuted(train, test, task_count=2, per_task=20, test_per_task=10, seed=0)
    rows = {bytes(r) for r in train.x}
    assert all(bytes(r) in rows for r in stream.tasks[0].train.x)
    perm = stream.transforms[1]
    assert not np.array_equal(perm, np.arange(9))


def test_permuted_applies_the_recorded_permutation():
    train, test = tiny_source(100), tiny_source(40, 1)
    stream = build_permuted(train, test, task_count=3, per_task=20, test_per_task=10, seed=1)
    inv = {bytes(r[stream.transforms[2]]): True for r in train.x}
    assert all(bytes(r) in inv for r in stream.tasks[2].train.x)


def test_per_task_too_large():
    with pytest.raises(StreamConfigError):
        build_permuted(tiny_source(50), tiny_source(50), task_count=2, per_task=51)
    with pytest.raises(StreamConfigError):
        build_rotated(tiny_source(49), tiny_source(50), task_count=2, per_task=10, test_per_task=60)


def test_rotation_zero_is_identity(mnist):
    x = mnist[0].x[:20]
    assert np.array_equal(rotate_images(x, 0.0), x)


def test_rotation_180_twice(mnist):
    x = mnist[1].x[:200]
    back = rotate_images(rotate_images(x, 180.0), 180.0)
    assert np.abs(back - x).max() <= 2e-2


def test_rotation_preserves_pixel_mass(mnist):
    rng = np.random.default_rng(0)
    x = mnist[1].x[rng.choice(10000, 300, replace=False)]
    for angle in (15.0, 45.0, 90.0, 137.0):
        ratio = rotate_images(x, angle).sum(axis=1) / x.sum(axis=1)
        assert np.all(np.abs(ratio - 1) <= 0.15), angle


def test_rotated_stream(mnist):
    stream = build_rotated(*mnist, task_count=4, per_task=200, test_per_task=100, seed=2)
    assert stream.transforms[0] == 0.0
    assert all(0.0 <= a < 180.0 for a in stream.transforms)
    assert stream.manifest["angles"] == stream.transforms


# synthetic


def test_synthetic_class_il_disjoint():
    stream = build_synthetic(4, 3, 10, seed=0)
    sets = [set(t.train.y.tolist()) for t in stream.tasks]
    assert all(not sets[i] & sets[j] for i in range(4) for j in range(i + 1, 4))
    assert stream.n_classes == 12


def test_synthetic_width_check():
    with pytest.raises(StreamConfigError):
        build_synthetic(width=1)


def test_two_blobs_linear_model_separates():
    stream = build_synthetic(1, 2, 500, width=10, separation=8.0, seed=0, scenario="domain-il")
    result = run_scenario(stream, TrainConfig(method="finetune", hidden=(), seed=0))
    assert result.R.R[0, 0] > 0.99


def test_no_shift_no_forgetting():
    stream = build_synthetic(4, 2, 200, width=10, shift=0.0, seed=1, scenario="domain-il")
    result = run_scenario(stream, TrainConfig(method="er", hidden=(16,), buffer_capacity=50, seed=0))
    assert abs(forgetting(result.R)) < 0.03


def test_streams_deterministic(mnist):
    a = build_rotated(*mnist, task_count=3, per_task=100, test_per_task=50, seed=5)
    b = build_rotated(*mnist, task_count=3, per_task=100, test_per_task=50, seed=5)
    c = build_rotated(*mnist, task_count=3, per_task=100, test_per_task=50, seed=6)
    assert stream_digest(a) == stream_digest(b) != stream_digest(c)
    assert stream_digest(build_synthetic(seed=4)) == stream_digest(build_synthetic(seed=4))


def test_train_test_disjoint(mnist):
    for stream in (build_split(*mnist), build_permuted(*mnist, seed=0)):
        train_hashes = {hashlib.sha1(r.tobytes()).digest() for t in stream.tasks for r in t.train.x}
        for t in stream.tasks:
            assert not any(hashlib.sha1(r.tobytes()).digest() in train_hashes for r in t.test.x)

"""MNIST ingestion and task streams (split, permuted, rotated, synthetic)."""
from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DEFAULT_PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9))
SCENARIOS = ("class-il", "task-il", "domain-il")


class IngestionError(ValueError):
    pass


class StreamConfigError(ValueError):
    pass


@dataclass
class LabeledSet:
    x: np.ndarray           # n x width, float64 in [0, 1]
    y: np.ndarray           # n, int64

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.x[idx], self.y[idx])


@dataclass
class Task:
    task_id: int
    train: LabeledSet
    test: LabeledSet
    classes: tuple[int, ...]    # source labels present in this task


@dataclass
class TaskStream:
    tasks: list[Task]
    scenario: str
    n_classes: int              # head width: total classes, or per-task classes in task-IL
    input_width: int
    manifest: dict = field(default_factory=dict)
    transforms: list = field(default_factory=list)   # per-task permutation or angle

    def __len__(self):
        return len(self.tasks)

    def head_classes(self, task_id: int) -> int:
        return self.n_classes


# IDX files


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _header(buf: bytes, path, n_dims: int, magic: int) -> tuple[int, ...]:
    size = 4 * (1 + n_dims)
    if len(buf) < size:
        raise IngestionError(f"{path}: truncated header at offset {len(buf)} (need {size} bytes)")
    got, *dims = struct.unpack(f">{1 + n_dims}I", buf[:size])
    if got != magic:
        raise IngestionError(f"{path}: bad magic 0x{got:08x} at offset 0, expected 0x{magic:08x}")
    return tuple(dims)


def load_idx(images_path, labels_path) -> LabeledSet:
    """Read an IDX image/label file pair; pixels are scaled by 1/255."""
    ibuf, lbuf = _read_bytes(images_path), _read_bytes(labels_path)
    n, rows, cols = _header(ibuf, images_path, 3, IMAGES_MAGIC)
    (n_labels,) = _header(lbuf, labels_path, 1, LABELS_MAGIC)
    if n != n_labels:
        raise IngestionError(f"{labels_path}: label count {n_labels} at offset 4 does not match "
                             f"image count {n} in {images_path}")
    need = 16 + n * rows * cols
    if len(ibuf) < need:
        raise IngestionError(f"{images_path}: truncated pixel data at offset {len(ibuf)}, expected {need} bytes")
    if len(lbuf) < 8 + n:
        raise IngestionError(f"{labels_path}: truncated label data at offset {len(lbuf)}, expected {8 + n} bytes")
    pixels = np.frombuffer(ibuf, dtype=np.uint8, count=n * rows * cols, offset=16)
    labels = np.frombuffer(lbuf, dtype=np.uint8, count=n, offset=8)
    return LabeledSet(pixels.reshape(n, rows * cols).astype(np.float64) / 255.0,
                      labels.astype(np.int64))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n x rows x cols) and labels as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABELS_MAGIC, len(labels))
                                  + np.asarray(labels, dtype=np.uint8).tobytes())


def _find(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (data_dir / name).exists():
            return data_dir / name
    raise FileNotFoundError(f"{stem} not found in {data_dir}")


def load_mnist(data_dir) -> tuple[LabeledSet, LabeledSet]:
    data_dir = Path(data_dir)
    train = load_idx(_find(data_dir, "train-images-idx3-ubyte"), _find(data_dir, "train-labels-idx1-ubyte"))
    test = load_idx(_find(data_dir, "t10k-images-idx3-ubyte"), _find(data_dir, "t10k-labels-idx1-ubyte"))
    return train, test


# stream builders


def build_split(train: LabeledSet, test: LabeledSet, pairs=DEFAULT_PAIRS,
                scenario: str = "class-il") -> TaskStream:
    """One task per label group, in the given order.

    Task-IL relabels each group to 0..k-1 (position within the group).
    """
    if scenario not in ("class-il", "task-il"):
        raise StreamConfigError(f"split streams are class-il or task-il, not {scenario}")
    flat = [c for p in pairs for c in p]
    if len(set(flat)) != len(flat):
        raise StreamConfigError(f"label groups overlap: {pairs}")
    sizes = {len(p) for p in pairs}
    if scenario == "task-il" and len(sizes) != 1:
        raise StreamConfigError("task-il needs equally sized label groups")
    tasks = []
    for k, group in enumerate(pairs):
        parts = []
        for src in (train, test):
            idx = np.flatnonzero(np.isin(src.y, group))
            part = src.subset(idx)
            if scenario == "task-il":
                part = LabeledSet(part.x, to_local_labels(part.y, group))
            parts.append(part)
        tasks.append(Task(k, parts[0], parts[1], tuple(group)))
    n_classes = len(pairs[0]) if scenario == "task-il" else max(flat) + 1
    manifest = {"dataset": "split", "pairs": [list(p) for p in pairs], "scenario": scenario,
                "train_sizes": [len(t.train) for t in tasks], "test_sizes": [len(t.test) for t in tasks]}
    return TaskStream(tasks, scenario, n_classes, train.x.shape[1], manifest)


def to_local_labels(y: np.ndarray, group) -> np.ndarray:
    lut = {c: i for i, c in enumerate(group)}
    return np.array([lut[int(v)] for v in y], dtype=np.int64)


def to_source_labels(y: np.ndarray, group) -> np.ndarray:
    return np.asarray(group, dtype=np.int64)[np.asarray(y)]


def _draw(rng, src: LabeledSet, k: int, what: str) -> LabeledSet:
    if k > len(src):
        raise StreamConfigError(f"{what}: {k} examples requested, only {len(src)} available")
    return src.subset(np.sort(rng.choice(len(src), size=k, replace=False)))


def build_permuted(train: LabeledSet, test: LabeledSet, task_count: int = 20, per_task: int = 1000,
                   seed: int = 0, test_per_task: int = 1000, identity_first: bool = True) -> TaskStream:
    """Each task draws a fresh sample and applies one fixed pixel permutation."""
    rng = np.random.default_rng(seed)
    width = train.x.shape[1]
    tasks, perms = [], []
    for k in range(task_count):
        perm = np.arange(width) if (k == 0 and identity_first) else rng.permutation(width)
        tr = _draw(rng, train, per_task, "train")
        te = _draw(rng, test, test_per_task, "test")
        tasks.append(Task(k, LabeledSet(tr.x[:, perm], tr.y), LabeledSet(te.x[:, perm], te.y),
                          tuple(range(10))))
        perms.append(perm)
    manifest = {"dataset": "permuted", "seed": seed, "task_count": task_count,
                "per_task": per_task, "test_per_task": test_per_task,
                "identity_first": identity_first,
                "permutation_sha1": [hashlib.sha1(p.tobytes()).hexdigest() for p in perms]}
    return TaskStream(tasks, "domain-il", 10, width, manifest, perms)


def rotate_images(x: np.ndarray, degrees: float, side: int = 28) -> np.ndarray:
    """Rotate flattened square images about their center; bilinear, zero fill."""
    if degrees == 0:
        return x.copy()
    imgs = x.reshape(-1, side, side)
    out = ndimage.rotate(imgs, degrees, axes=(2, 1), reshape=False, order=1,
                         mode="constant", cval=0.0, prefilter=False)
    return np.clip(out, 0.0, 1.0).reshape(len(x), side * side)


def build_rotated(train: LabeledSet, test: LabeledSet, task_count: int = 20, per_task: int = 1000,
                  seed: int = 0, test_per_task: int = 1000, identity_first: bool = True) -> TaskStream:
    """Each task draws a fresh sample rotated by an angle in [0, 180)."""
    rng = np.random.default_rng(seed)
    side = int(round(np.sqrt(train.x.shape[1])))
    tasks, angles = [], []
    for k in range(task_count):
        angle = 0.0 if (k == 0 and identity_first) else float(rng.uniform(0.0, 180.0))
        tr = _draw(rng, train, per_task, "train")
        te = _draw(rng, test, test_per_task, "test")
        tasks.append(Task(k, LabeledSet(rotate_images(tr.x, angle, side), tr.y),
                          LabeledSet(rotate_images(te.x, angle, side), te.y), tuple(range(10))))
        angles.append(angle)
    manifest = {"dataset": "rotated", "seed": seed, "task_count": task_count,
                "per_task": per_task, "test_per_task": test_per_task,
                "identity_first": identity_first, "angles": angles}
    return TaskStream(tasks, "domain-il", 10, train.x.shape[1], manifest, angles)


def build_synthetic(task_count: int = 5, classes_per_task: int = 2, per_class: int = 100,
                    width: int = 20, shift: float = 0.0, seed: int = 0,
                    scenario: str = "class-il", separation: float = 4.0,
                    test_per_class: int | None = None) -> TaskStream:
    """Gaussian blobs, one per class, unit noise.

    class-il / task-il: each task owns ``classes_per_task`` new classes.
    domain-il: every task has the same classes, with all means moved by
    ``shift * task`` along one fixed random direction.
    """
    if width < 2:
        raise StreamConfigError("synthetic width must be at least 2")
    if scenario not in SCENARIOS:
        raise StreamConfigError(f"unknown scenario {scenario}")
    rng = np.random.default_rng(seed)
    test_per_class = per_class if test_per_class is None else test_per_class
    n_total = classes_per_task if scenario == "domain-il" else classes_per_task * task_count
    means = rng.normal(size=(n_total, width))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    direction = rng.normal(size=width)
    direction /= np.linalg.norm(direction)

    def blobs(classes, offset, count):
        xs = [means[c] + offset + rng.normal(size=(count, width)) for c in classes]
        ys = [np.full(count, c, dtype=np.int64) for c in classes]
        return LabeledSet(np.concatenate(xs), np.concatenate(ys))

    tasks = []
    for k in range(task_count):
        if scenario == "domain-il":
            classes = tuple(range(classes_per_task))
            offset = shift * k * direction
        else:
            classes = tuple(range(k * classes_per_task, (k + 1) * classes_per_task))
            offset = np.zeros(width)
        tr, te = blobs(classes, offset, per_class), blobs(classes, offset, test_per_class)
        if scenario == "task-il":
            tr = LabeledSet(tr.x, to_local_labels(tr.y, classes))
            te = LabeledSet(te.x, to_local_labels(te.y, classes))
        tasks.append(Task(k, tr, te, classes))
    n_classes = classes_per_task if scenario in ("task-il", "domain-il") else n_total
    manifest = {"dataset": "synthetic", "seed": seed, "task_count": task_count,
                "classes_per_task": classes_per_task, "per_class": per_class, "width": width,
                "shift": shift, "separation": separation, "scenario": scenario}
    return TaskStream(tasks, scenario, n_classes, width, manifest)


def stream_digest(stream: TaskStream) -> str:
    """SHA-1 over every array in the stream, for reproducibility checks."""
    h = hashlib.sha1()
    for t in stream.tasks:
        for part in (t.train, t.test):
            h.update(np.ascontiguousarray(part.x).tobytes())
            h.update(np.ascontiguousarray(part.y).tobytes())
    return h.hexdigest()

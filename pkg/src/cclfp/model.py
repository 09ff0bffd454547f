"""MLP feature extractor, classifier heads and the frozen extractor snapshot."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tape, Var

CHECKPOINT_VERSION = 1


class ProtocolError(RuntimeError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


@dataclass
class ExtractorParams:
    """Linear layers with ReLU after each; ``weights[k]`` is in x out."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    width: int = 0                              # used only when there are no layers

    @classmethod
    def init(cls, rng: np.random.Generator, input_width: int, hidden: tuple[int, ...] = (100, 100)):
        widths = [input_width, *hidden]
        ws = [glorot(rng, i, o) for i, o in zip(widths[:-1], widths[1:])]
        bs = [np.zeros((1, o)) for o in widths[1:]]
        return cls(ws, bs, input_width)

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0] if self.weights else self.width

    @property
    def output_width(self) -> int:
        return self.weights[-1].shape[1] if self.weights else self.width

    def arrays(self) -> list[np.ndarray]:
        return [x for pair in zip(self.weights, self.biases) for x in pair]

    def copy(self) -> "ExtractorParams":
        return copy.deepcopy(self)


def identity_extractor(width: int) -> ExtractorParams:
    """Extractor with no layers: the embedding is the input itself."""
    return ExtractorParams([], [], width)


@dataclass
class HeadParams:
    mode: str                                   # "single" or "multi"
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def single(cls, rng, emb_width: int, n_classes: int) -> "HeadParams":
        return cls("single", [glorot(rng, emb_width, n_classes)], [np.zeros((1, n_classes))])

    def add_task_head(self, rng, emb_width: int, n_classes: int) -> int:
        if self.mode != "multi":
            raise ProtocolError("only multi-head mode grows heads")
        self.weights.append(glorot(rng, emb_width, n_classes))
        self.biases.append(np.zeros((1, n_classes)))
        return len(self.weights) - 1

    @property
    def n_heads(self) -> int:
        return len(self.weights)

    def select(self, task_id: int | None) -> int:
        if self.mode == "single":
            return 0
        if task_id is None:
            raise ProtocolError("multi-head classification needs a task id")
        if not 0 <= task_id < self.n_heads:
            raise ProtocolError(f"no head for task {task_id}")
        return int(task_id)

    def arrays(self) -> list[np.ndarray]:
        return [x for pair in zip(self.weights, self.biases) for x in pair]


@dataclass
class ExtractorSnapshot:
    params: ExtractorParams | None = None

    @property
    def valid(self) -> bool:
        return self.params is not None


@dataclass
class ModelState:
    extractor: ExtractorParams
    head: HeadParams


def snapshot(params: ExtractorParams | ExtractorSnapshot) -> ExtractorSnapshot:
    if isinstance(params, ExtractorSnapshot):
        params = params.params
    return ExtractorSnapshot(None if params is None else params.copy())


# forward passes. With a tape, parameters come in as Vars from ``bind``.


def embed(params: ExtractorParams, x: np.ndarray) -> np.ndarray:
    """Detached forward pass."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != params.input_width:
        raise ShapeError(f"embed: input width {x.shape[1]}, extractor expects {params.input_width}")
    h = x
    for w, b in zip(params.weights, params.biases):
        h = np.maximum(h @ w + b, 0.0)
    return h


def classify(head: HeadParams, emb: np.ndarray, task_id: int | None = None) -> np.ndarray:
    k = head.select(task_id)
    return emb @ head.weights[k] + head.biases[k]


@dataclass
class BoundModel:
    """Model parameters registered as leaves on one tape."""

    tape: Tape
    ext_w: list[Var]
    ext_b: list[Var]
    head_w: list[Var]
    head_b: list[Var]
    head: HeadParams

    def embed(self, x) -> Var:
        h = self.tape.const(x)
        if self.ext_w and h.shape[1] != self.ext_w[0].shape[0]:
            raise ShapeError("embed: input width mismatch")
        for w, b in zip(self.ext_w, self.ext_b):
            h = self.tape.relu(self.tape.add_row(self.tape.matmul(h, w), b))
        return h

    def classify(self, emb: Var, task_id: int | None = None) -> Var:
        k = self.head.select(task_id)
        return self.tape.add_row(self.tape.matmul(emb, self.head_w[k]), self.head_b[k])

    def leaves(self) -> list[Var]:
        return [*self.ext_w, *self.ext_b, *self.head_w, *self.head_b]

    def grads(self):
        """Gradients in the order of ``ModelState`` arrays (extractor, then head)."""
        t = self.tape
        ext = [t.grad(v) for pair in zip(self.ext_w, self.ext_b) for v in pair]
        head = [t.grad(v) for pair in zip(self.head_w, self.head_b) for v in pair]
        return ext, head


def bind(tape: Tape, state: ModelState, heads: set[int] | None = None) -> BoundModel:
    """Register parameters on ``tape``.  Heads outside ``heads`` become constants."""
    ext = state.extractor
    ew = [tape.param(w) for w in ext.weights]
    eb = [tape.param(b) for b in ext.biases]
    hw, hb = [], []
    for k, (w, b) in enumerate(zip(state.head.weights, state.head.biases)):
        live = heads is None or k in heads
        hw.append(tape.param(w) if live else tape.const(w))
        hb.append(tape.param(b) if live else tape.const(b))
    return BoundModel(tape, ew, eb, hw, hb, state.head)


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    """In-place p <- p - lr * g."""
    if len(params) != len(grads):
        raise ShapeError("parameter and gradient counts differ")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"sgd_step: {p.shape} vs {g.shape}")
        p -= lr * g


def state_arrays(state: ModelState) -> list[np.ndarray]:
    return state.extractor.arrays() + state.head.arrays()


# checkpoint container: one .npz holding model, snapshot and buffer


def save_checkpoint(path, state: ModelState, snap: ExtractorSnapshot | None = None, buffer=None) -> None:
    out = {
        "version": np.array(CHECKPOINT_VERSION),
        "head_mode": np.array(state.head.mode),
        "n_layers": np.array(len(state.extractor.weights)),
        "n_heads": np.array(state.head.n_heads),
        "input_width": np.array(state.extractor.input_width),
    }
    for k, (w, b) in enumerate(zip(state.extractor.weights, state.extractor.biases)):
        out[f"ext_w{k}"], out[f"ext_b{k}"] = w, b
    for k, (w, b) in enumerate(zip(state.head.weights, state.head.biases)):
        out[f"head_w{k}"], out[f"head_b{k}"] = w, b
    if snap is not None and snap.valid:
        for k, (w, b) in enumerate(zip(snap.params.weights, snap.params.biases)):
            out[f"snap_w{k}"], out[f"snap_b{k}"] = w, b
    if buffer is not None:
        out.update({f"buf_{k}": v for k, v in buffer.state_dict().items()})
    np.savez(path, **out)


def load_checkpoint(path):
    """Returns (ModelState, ExtractorSnapshot, buffer state dict or None)."""
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(z['version'])}")
        n_layers, n_heads = int(z["n_layers"]), int(z["n_heads"])
        if n_layers:
            ext = ExtractorParams([z[f"ext_w{k}"] for k in range(n_layers)],
                                  [z[f"ext_b{k}"] for k in range(n_layers)], int(z["input_width"]))
        else:
            ext = identity_extractor(int(z["input_width"]))
        head = HeadParams(str(z["head_mode"]),
                          [z[f"head_w{k}"] for k in range(n_heads)],
                          [z[f"head_b{k}"] for k in range(n_heads)])
        snap = ExtractorSnapshot()
        if "snap_w0" in z.files:
            snap = ExtractorSnapshot(ExtractorParams(
                [z[f"snap_w{k}"] for k in range(n_layers)],
                [z[f"snap_b{k}"] for k in range(n_layers)], int(z["input_width"])))
        buf = {k[4:]: z[k] for k in z.files if k.startswith("buf_")} or None
    return ModelState(ext, head), snap, buf

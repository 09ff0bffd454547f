"""Single-epoch continual training loop and the baselines built on it.

Per current-task minibatch: draw a memory minibatch, concatenate, take one
SGD step on the combined objective, then offer the current examples to the
reservoir.  The extractor snapshot is refreshed when a task ends and used
throughout the next one.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape
from .buffer import MemoryBuffer
from .data import TaskStream
from .losses import BatchContext, LossConfig, total_loss
from .metrics import AccuracyMatrix
from .model import (ExtractorParams, ExtractorSnapshot, HeadParams, ModelState, ProtocolError,
                    bind, classify, embed, identity_extractor, sgd_step, snapshot)

log = logging.getLogger(__name__)

METHODS = ("finetune", "joint", "er", "ccl-fp", "ccl-fp+")
REPLAY_METHODS = ("er", "ccl-fp", "ccl-fp+")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    method: str = "ccl-fp+"
    loss: LossConfig = field(default_factory=LossConfig)
    batch_size: int = 10
    memory_batch_size: int = 10
    lr: float = 0.03
    buffer_capacity: int = 200
    seed: int = 0
    hidden: tuple[int, ...] = (100, 100)
    mask_unseen: bool = False   # class-IL: restrict logits to classes seen so far

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.batch_size < 1 or self.memory_batch_size < 0 or self.buffer_capacity < 0:
            raise ConfigError("batch sizes and buffer capacity must be non-negative (batch size >= 1)")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")

    @property
    def uses_buffer(self) -> bool:
        return self.method in REPLAY_METHODS and self.buffer_capacity > 0

    def effective_loss(self) -> LossConfig:
        """Coefficients the method actually trains with."""
        if self.method in ("finetune", "joint", "er"):
            return replace(self.loss, w=0.0, alpha=0.0, beta=0.0)
        if self.method == "ccl-fp":
            return replace(self.loss, beta=0.0)
        return self.loss


@dataclass
class RunState:
    model: ModelState
    snapshot: ExtractorSnapshot
    buffer: MemoryBuffer | None
    R: AccuracyMatrix
    rng_init: np.random.Generator
    rng_order: np.random.Generator
    rng_memory: np.random.Generator
    steps: list[tuple] = field(default_factory=list)
    examples_seen: int = 0


@dataclass
class RunResult:
    R: AccuracyMatrix
    steps: list[tuple]
    state: RunState


def init_state(stream: TaskStream, cfg: TrainConfig, n_rows: int | None = None) -> RunState:
    ss = np.random.SeedSequence(cfg.seed)
    s_init, s_order, s_reservoir, s_memory = ss.spawn(4)
    rng_init = np.random.default_rng(s_init)
    if cfg.hidden:
        ext = ExtractorParams.init(rng_init, stream.input_width, tuple(cfg.hidden))
    else:
        ext = identity_extractor(stream.input_width)
    if stream.scenario == "task-il":
        head = HeadParams("multi")
    else:
        head = HeadParams.single(rng_init, ext.output_width, stream.n_classes)
    buf = MemoryBuffer(cfg.buffer_capacity, s_reservoir) if cfg.uses_buffer else None
    return RunState(ModelState(ext, head), ExtractorSnapshot(), buf,
                    AccuracyMatrix(len(stream), n_rows), rng_init,
                    np.random.default_rng(s_order), np.random.default_rng(s_memory))


def _ensure_heads(state: RunState, stream: TaskStream, upto: int) -> None:
    head = state.model.head
    while head.mode == "multi" and head.n_heads <= upto:
        head.add_task_head(state.rng_init, state.model.extractor.output_width,
                           stream.head_classes(head.n_heads))


def _seen_class_mask(stream: TaskStream, upto: int) -> np.ndarray:
    seen = {c for t in stream.tasks[: upto + 1] for c in t.classes}
    row = np.full((1, stream.n_classes), -1e9)
    row[0, sorted(seen)] = 0.0
    return row


def train_step(state: RunState, cfg: TrainConfig, loss_cfg: LossConfig, x, y, task_ids,
               live_heads: set[int] | None, logit_mask=None) -> dict:
    """One SGD step on a (current ++ memory) batch; returns loss parts."""
    tape = Tape()
    bm = bind(tape, state.model, live_heads)
    cur = bm.embed(x)
    prev = None
    if state.snapshot.valid and (loss_cfg.w > 0 or loss_cfg.alpha > 0):
        prev = embed(state.snapshot.params, x)
    ctx = BatchContext(x, y, task_ids, cur, prev, logit_mask)
    loss, parts = total_loss(ctx, bm, loss_cfg)
    tape.backward(loss)
    ext_g, head_g = bm.grads()
    sgd_step(state.model.extractor.arrays(), ext_g, cfg.lr)
    head = state.model.head
    for k in range(head.n_heads):
        if live_heads is None or k in live_heads:
            sgd_step([head.weights[k], head.biases[k]], head_g[2 * k: 2 * k + 2], cfg.lr)
    return parts


def train_task(state: RunState, stream: TaskStream, task_index: int, cfg: TrainConfig) -> int:
    """Train one pass over task ``task_index``; returns the number of steps."""
    task = stream.tasks[task_index]
    n = len(task.train)
    if n == 0:
        raise ProtocolError(f"task {task_index} has no training data")
    _ensure_heads(state, stream, task_index)
    loss_cfg = cfg.effective_loss()
    live = {task_index} if state.model.head.mode == "multi" else None
    mask = None
    if cfg.mask_unseen and stream.scenario == "class-il":
        mask = _seen_class_mask(stream, task_index)
    order = state.rng_order.permutation(n)
    n_steps = math.ceil(n / cfg.batch_size)
    for step in range(n_steps):
        idx = order[step * cfg.batch_size: (step + 1) * cfg.batch_size]
        x, y = task.train.x[idx], task.train.y[idx]
        tids = np.full(len(idx), task_index, dtype=np.int64)
        if state.buffer is not None and len(state.buffer) and cfg.memory_batch_size:
            mx, my, mt = state.buffer.sample(cfg.memory_batch_size, state.rng_memory)
            x, y, tids = np.concatenate([x, mx]), np.concatenate([y, my]), np.concatenate([tids, mt])
        parts = train_step(state, cfg, loss_cfg, x, y, tids, live, mask)
        state.steps.append((task_index + 1, step + 1, parts["er"], parts["cl"], parts["scl"], parts["total"]))
        if state.buffer is not None:
            state.buffer.offer_batch(task.train.x[idx], task.train.y[idx], [task_index] * len(idx))
        state.examples_seen += len(idx)
    state.snapshot = snapshot(state.model.extractor)
    return n_steps


def evaluate_task(model: ModelState, stream: TaskStream, task_index: int, upto: int,
                  mask_unseen: bool = False) -> float:
    task = stream.tasks[task_index]
    emb = embed(model.extractor, task.test.x)
    tid = task_index if model.head.mode == "multi" else None
    logits = classify(model.head, emb, tid)
    if mask_unseen and stream.scenario == "class-il":
        logits = logits + _seen_class_mask(stream, upto)
    return float((logits.argmax(axis=1) == task.test.y).mean())


def validate(stream: TaskStream, cfg: TrainConfig) -> None:
    if stream.scenario not in ("class-il", "task-il", "domain-il"):
        raise ConfigError(f"unknown scenario {stream.scenario!r}")
    if cfg.mask_unseen and stream.scenario != "class-il":
        raise ConfigError("mask_unseen only applies to class-il")


def run_scenario(stream: TaskStream, cfg: TrainConfig) -> RunResult:
    """Train through the stream, filling R[t, j] for j <= t after each task.

    The joint baseline trains once on the shuffled union of all tasks and
    produces a single row.
    """
    validate(stream, cfg)
    if cfg.method == "joint":
        return _run_joint(stream, cfg)
    state = init_state(stream, cfg)
    for t in range(len(stream)):
        train_task(state, stream, t, cfg)
        for j in range(t + 1):
            state.R.set(t, j, evaluate_task(state.model, stream, j, t, cfg.mask_unseen))
        log.info("task %d done: acc=%s", t + 1, np.round(state.R.R[t, : t + 1], 4).tolist())
    return RunResult(state.R, state.steps, state)


def _run_joint(stream: TaskStream, cfg: TrainConfig) -> RunResult:
    state = init_state(stream, cfg, n_rows=1)
    _ensure_heads(state, stream, len(stream) - 1)
    x = np.concatenate([t.train.x for t in stream.tasks])
    y = np.concatenate([t.train.y for t in stream.tasks])
    tids = np.concatenate([np.full(len(t.train), k, dtype=np.int64) for k, t in enumerate(stream.tasks)])
    loss_cfg = cfg.effective_loss()
    order = state.rng_order.permutation(len(y))
    for step in range(math.ceil(len(y) / cfg.batch_size)):
        idx = order[step * cfg.batch_size: (step + 1) * cfg.batch_size]
        parts = train_step(state, cfg, loss_cfg, x[idx], y[idx], tids[idx], None)
        state.steps.append((1, step + 1, parts["er"], parts["cl"], parts["scl"], parts["total"]))
        state.examples_seen += len(idx)
    last = len(stream) - 1
    for j in range(len(stream)):
        state.R.set(0, j, evaluate_task(state.model, stream, j, last, cfg.mask_unseen))
    return RunResult(state.R, state.steps, state)

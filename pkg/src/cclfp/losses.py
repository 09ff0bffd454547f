"""Replay on propagated embeddings, contrastive rehearsal and supervised
contrastive losses, computed over one concatenated minibatch.

All sums that would range over the whole training set range over the
current batch (current-task rows followed by memory rows).  Embeddings of
the frozen extractor (``prev``) are plain arrays and never receive gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Var
from .model import BoundModel


@dataclass(frozen=True)
class LossConfig:
    w: float = 0.0          # propagation weight
    eta: float = 0.1        # propagation temperature
    tau: float = 0.1        # contrastive temperature
    alpha: float = 0.0      # contrastive rehearsal coefficient
    beta: float = 0.0       # supervised contrastive coefficient

    def __post_init__(self):
        if not 0.0 <= self.w < 1.0:
            raise ValueError(f"w must lie in [0, 1), got {self.w}")
        if self.eta <= 0 or self.tau <= 0:
            raise ValueError("temperatures must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss coefficients must be non-negative")


@dataclass
class BatchContext:
    inputs: np.ndarray
    labels: np.ndarray
    task_ids: np.ndarray
    cur: Var                        # embeddings under the live extractor
    prev: np.ndarray | None = None  # embeddings under the snapshot, detached
    logit_mask: np.ndarray | None = None  # 1 x classes, added to single-head logits

    def __post_init__(self):
        if self.prev is not None and self.prev.shape != self.cur.shape:
            raise ValueError("current and previous embeddings differ in shape")

    @property
    def tape(self):
        return self.cur.tape

    def __len__(self):
        return self.cur.shape[0]


def propagation_weights(ctx: BatchContext, eta: float) -> Var:
    """Row-stochastic A with A[i, j] proportional to exp(-eta * d(cur_i, prev_j))."""
    t = ctx.tape
    d = t.pairwise_euclidean(ctx.cur, t.const(ctx.prev))
    return t.row_softmax(t.scale(d, -eta))


def propagate(ctx: BatchContext, a: Var, w: float) -> Var:
    """(1 - w) * cur + w * A @ prev."""
    t = ctx.tape
    pulled = t.matmul(a, t.const(ctx.prev))
    return t.add(t.scale(ctx.cur, 1.0 - w), t.scale(pulled, w))


def classification_loss(ctx: BatchContext, model: BoundModel, emb: Var) -> Var:
    """Mean cross-entropy; in multi-head mode each row uses its task's head."""
    t = ctx.tape
    if model.head.mode == "single":
        logits = model.classify(emb)
        if ctx.logit_mask is not None:
            logits = t.add_row(logits, t.const(ctx.logit_mask))
        return t.cross_entropy(logits, ctx.labels)
    parts = []
    for task in np.unique(ctx.task_ids):
        idx = np.flatnonzero(ctx.task_ids == task)
        logits = model.classify(t.take_rows(emb, idx), int(task))
        parts.append(t.cross_entropy(logits, ctx.labels[idx], reduction="sum"))
    total = parts[0]
    for p in parts[1:]:
        total = t.add(total, p)
    return t.scale(total, 1.0 / len(ctx))


def replay_loss(ctx: BatchContext, model: BoundModel, w: float, a: Var | None = None,
                eta: float = 0.1) -> Var:
    """Cross-entropy of the head applied to propagated embeddings.

    With ``w == 0`` (or no snapshot) the embeddings are used as they are,
    which is plain experience replay.
    """
    if w == 0.0 or ctx.prev is None:
        return classification_loss(ctx, model, ctx.cur)
    if a is None:
        a = propagation_weights(ctx, eta)
    return classification_loss(ctx, model, propagate(ctx, a, w))


def _weighted_log_prob_sum(t, logp: Var, weights: np.ndarray) -> Var:
    return t.neg(t.sum(t.mul(logp, t.const(weights))))


def contrastive_rehearsal_loss(ctx: BatchContext, tau: float) -> Var:
    """-mean_i log softmax_j(-tau * d(cur_i, prev_j)) evaluated at j = i."""
    t = ctx.tape
    n = len(ctx)
    d = t.pairwise_euclidean(ctx.cur, t.const(ctx.prev))
    logp = t.row_log_softmax(t.scale(d, -tau))
    return _weighted_log_prob_sum(t, logp, np.eye(n) / n)


def supervised_contrastive_loss(ctx: BatchContext, tau: float) -> Var:
    """Pull same-label embeddings together relative to the rest of the batch.

    Anchors without a same-label peer are skipped; with no usable anchor the
    loss is a constant 0.
    """
    t = ctx.tape
    n = len(ctx)
    labels = np.asarray(ctx.labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    counts = same.sum(axis=1)
    anchors = counts > 0
    if n < 2 or not anchors.any():
        return t.const(0.0)
    weights = np.zeros((n, n))
    weights[anchors] = same[anchors] / counts[anchors, None]
    weights /= anchors.sum()
    d = t.pairwise_euclidean(ctx.cur, ctx.cur)
    logp = t.row_log_softmax(t.scale(d, -tau), mask=~np.eye(n, dtype=bool))
    return _weighted_log_prob_sum(t, logp, weights)


def total_loss(ctx: BatchContext, model: BoundModel, cfg: LossConfig):
    """Replay + alpha * rehearsal + beta * supervised contrastive.

    Terms with a zero coefficient are not computed.  Propagation and
    rehearsal need the snapshot embeddings and are skipped when
    ``ctx.prev`` is None.  Returns ``(loss, parts)`` where ``parts`` maps
    term names to float values.
    """
    t = ctx.tape
    has_prev = ctx.prev is not None
    w = cfg.w if has_prev else 0.0
    er = replay_loss(ctx, model, w, eta=cfg.eta)
    parts = {"er": float(er.value[0, 0]), "cl": 0.0, "scl": 0.0}
    total = er
    if cfg.alpha > 0 and has_prev:
        cl = contrastive_rehearsal_loss(ctx, cfg.tau)
        parts["cl"] = float(cl.value[0, 0])
        total = t.add(total, t.scale(cl, cfg.alpha))
    if cfg.beta > 0:
        scl = supervised_contrastive_loss(ctx, cfg.tau)
        parts["scl"] = float(scl.value[0, 0])
        total = t.add(total, t.scale(scl, cfg.beta))
    parts["total"] = float(total.value[0, 0])
    return total, parts

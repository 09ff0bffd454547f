"""Reverse-mode differentiation over dense float64 matrices.

Every value on a :class:`Tape` is a 2-D ``numpy.ndarray`` of dtype float64;
scalars are 1x1.  Operations append a :class:`TapeNode` and return a
:class:`Var` handle.  ``Tape.backward`` walks the nodes in reverse order and
applies the rule registered for each op in :data:`BACKWARD_RULES`.

    >>> tape = Tape()
    >>> p = tape.param(np.array([[1.0, -2.0]]))
    >>> loss = tape.sum(p * p)
    >>> tape.backward(loss)[p.id]
    array([[ 2., -4.]])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

DIST_EPS = 1e-12


class ShapeError(ValueError):
    pass


class LabelError(ValueError):
    pass


@dataclass
class TapeNode:
    op: str
    inputs: tuple[int, ...]
    shape: tuple[int, int]
    saved: dict[str, Any] = field(default_factory=dict)
    requires_grad: bool = False


class Var:
    """Handle to one node of a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.id]

    @property
    def shape(self) -> tuple[int, int]:
        return self.tape.nodes[self.id].shape

    def __add__(self, other):
        return self.tape.add(self, other)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.scale(self, other)
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __neg__(self):
        return self.tape.neg(self)

    def __repr__(self):
        return f"Var(id={self.id}, op={self.tape.nodes[self.id].op}, shape={self.shape})"


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"expected a matrix, got {a.ndim}-d array")
    return a


def _softmax_rows(z: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax_rows(z: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    if mask is not None:
        zm = np.where(mask, z, -np.inf)
    else:
        zm = z
    m = zm.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(zm - m).sum(axis=1, keepdims=True))
    out = z - lse
    if mask is not None:
        out = np.where(mask, out, 0.0)
    return out


class Tape:
    """Records a computation and differentiates it in reverse."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.values: list[np.ndarray] = []
        self.grads: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, inputs, value, saved=None, requires_grad=None) -> Var:
        if requires_grad is None:
            requires_grad = any(self.nodes[i].requires_grad for i in inputs)
        for i in inputs:
            if i >= len(self.nodes):
                raise ValueError("tape inputs must refer to earlier nodes")
        node = TapeNode(op, tuple(inputs), value.shape, saved or {}, requires_grad)
        self.nodes.append(node)
        self.values.append(value)
        return Var(self, len(self.nodes) - 1)

    def _lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("variable belongs to another tape")
            return x
        return self.const(x)

    # leaves

    def param(self, value) -> Var:
        """A leaf that receives a gradient."""
        return self._push("leaf", (), as_matrix(value), requires_grad=True)

    def const(self, value) -> Var:
        """A leaf excluded from differentiation (detached)."""
        return self._push("leaf", (), as_matrix(value), requires_grad=False)

    # elementwise

    def add(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        if a.shape != b.shape:
            raise ShapeError(f"add: {a.shape} vs {b.shape}")
        return self._push("add", (a.id, b.id), a.value + b.value)

    def add_row(self, a, row) -> Var:
        """Add a 1 x n row to every row of ``a`` (bias broadcast)."""
        a, row = self._lift(a), self._lift(row)
        if row.shape != (1, a.shape[1]):
            raise ShapeError(f"add_row: {a.shape} vs {row.shape}")
        return self._push("add_row", (a.id, row.id), a.value + row.value)

    def sub(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        if a.shape != b.shape:
            raise ShapeError(f"sub: {a.shape} vs {b.shape}")
        return self._push("sub", (a.id, b.id), a.value - b.value)

    def mul(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        if a.shape != b.shape:
            raise ShapeError(f"mul: {a.shape} vs {b.shape}")
        return self._push("mul", (a.id, b.id), a.value * b.value)

    def scale(self, a, c: float) -> Var:
        a = self._lift(a)
        c = float(c)
        return self._push("scale", (a.id,), a.value * c, {"c": c})

    def neg(self, a) -> Var:
        a = self._lift(a)
        return self._push("neg", (a.id,), -a.value)

    def log(self, a) -> Var:
        a = self._lift(a)
        if np.any(a.value <= 0):
            raise ValueError("log of non-positive entry")
        return self._push("log", (a.id,), np.log(a.value))

    def exp(self, a) -> Var:
        a = self._lift(a)
        return self._push("exp", (a.id,), np.exp(a.value))

    def relu(self, a) -> Var:
        a = self._lift(a)
        return self._push("relu", (a.id,), np.maximum(a.value, 0.0))

    # structural

    def matmul(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} x {b.shape}")
        return self._push("matmul", (a.id, b.id), a.value @ b.value)

    def concat_rows(self, parts) -> Var:
        parts = [self._lift(p) for p in parts]
        widths = {p.shape[1] for p in parts}
        if len(widths) != 1:
            raise ShapeError(f"concat_rows: widths {sorted(widths)}")
        value = np.concatenate([p.value for p in parts], axis=0)
        return self._push("concat_rows", tuple(p.id for p in parts), value,
                          {"sizes": [p.shape[0] for p in parts]})

    def take_rows(self, a, index) -> Var:
        a = self._lift(a)
        index = np.asarray(index, dtype=np.intp)
        return self._push("take_rows", (a.id,), a.value[index], {"index": index})

    # reductions

    def sum(self, a) -> Var:
        a = self._lift(a)
        return self._push("sum", (a.id,), np.array([[a.value.sum()]]))

    def mean(self, a) -> Var:
        a = self._lift(a)
        return self._push("mean", (a.id,), np.array([[a.value.mean()]]))

    # distances and normalizers

    def pairwise_euclidean(self, a, b, eps: float = DIST_EPS) -> Var:
        """D[i, j] = sqrt(||a_i - b_j||^2 + eps)."""
        a, b = self._lift(a), self._lift(b)
        if a.shape[1] != b.shape[1]:
            raise ShapeError(f"pairwise_euclidean: widths {a.shape[1]} vs {b.shape[1]}")
        if eps <= 0:
            raise ValueError("eps must be positive")
        diff = a.value[:, None, :] - b.value[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=2) + eps)
        return self._push("pairwise_euclidean", (a.id, b.id), d)

    def row_softmax(self, a) -> Var:
        a = self._lift(a)
        return self._push("row_softmax", (a.id,), _softmax_rows(a.value))

    def row_log_softmax(self, a, mask=None) -> Var:
        """Log-softmax per row; entries where ``mask`` is False are left out
        of the normalizer and come back as 0 with zero gradient."""
        a = self._lift(a)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != a.shape:
                raise ShapeError("mask shape differs from input")
            if not mask.any(axis=1).all():
                raise ValueError("every row needs at least one unmasked entry")
        return self._push("row_log_softmax", (a.id,),
                          _log_softmax_rows(a.value, mask), {"mask": mask})

    def cross_entropy(self, logits, labels, reduction: str = "mean") -> Var:
        """Softmax cross-entropy against integer labels."""
        logits = self._lift(logits)
        labels = np.asarray(labels, dtype=np.intp)
        n, c = logits.shape
        if labels.shape != (n,):
            raise ShapeError(f"cross_entropy: {n} rows but {labels.shape} labels")
        if n and (labels.min() < 0 or labels.max() >= c):
            raise LabelError(f"label outside [0, {c})")
        if reduction not in ("mean", "sum"):
            raise ValueError(reduction)
        logp = _log_softmax_rows(logits.value)
        total = -logp[np.arange(n), labels].sum()
        value = total / n if reduction == "mean" else total
        return self._push("cross_entropy", (logits.id,), np.array([[value]]),
                          {"labels": labels, "probs": np.exp(logp), "reduction": reduction})

    # gradients

    def backward(self, loss: Var) -> dict[int, np.ndarray]:
        """Populate ``self.grads`` for every node that requires a gradient."""
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
        self.grads = {loss.id: np.ones((1, 1))}
        for nid in range(loss.id, -1, -1):
            g = self.grads.get(nid)
            node = self.nodes[nid]
            if g is None or not node.inputs:
                continue
            in_grads = BACKWARD_RULES[node.op](self, node, nid, g)
            for i, gi in zip(node.inputs, in_grads):
                if gi is None or not self.nodes[i].requires_grad:
                    continue
                if i in self.grads:
                    self.grads[i] = self.grads[i] + gi
                else:
                    self.grads[i] = gi
        return self.grads

    def grad(self, v: Var) -> np.ndarray:
        g = self.grads.get(v.id)
        return np.zeros(v.shape) if g is None else g


# backward rules: (tape, node, node_id, upstream grad) -> grads per input


def _vals(tape, node):
    return [tape.values[i] for i in node.inputs]


def _bw_add(tape, node, nid, g):
    return g, g


def _bw_add_row(tape, node, nid, g):
    return g, g.sum(axis=0, keepdims=True)


def _bw_sub(tape, node, nid, g):
    return g, -g


def _bw_mul(tape, node, nid, g):
    a, b = _vals(tape, node)
    return g * b, g * a


def _bw_scale(tape, node, nid, g):
    return (g * node.saved["c"],)


def _bw_neg(tape, node, nid, g):
    return (-g,)


def _bw_log(tape, node, nid, g):
    (a,) = _vals(tape, node)
    return (g / a,)


def _bw_exp(tape, node, nid, g):
    return (g * tape.values[nid],)


def _bw_relu(tape, node, nid, g):
    (a,) = _vals(tape, node)
    return (g * (a > 0),)


def _bw_matmul(tape, node, nid, g):
    a, b = _vals(tape, node)
    return g @ b.T, a.T @ g


def _bw_concat_rows(tape, node, nid, g):
    bounds = np.cumsum([0] + node.saved["sizes"])
    return tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))


def _bw_take_rows(tape, node, nid, g):
    (a,) = _vals(tape, node)
    out = np.zeros_like(a)
    np.add.at(out, node.saved["index"], g)
    return (out,)


def _bw_sum(tape, node, nid, g):
    (a,) = _vals(tape, node)
    return (np.full_like(a, g[0, 0]),)


def _bw_mean(tape, node, nid, g):
    (a,) = _vals(tape, node)
    return (np.full_like(a, g[0, 0] / a.size),)


def _bw_pairwise(tape, node, nid, g):
    a, b = _vals(tape, node)
    d = tape.values[nid]
    w = g / d                                   # n x m
    ga = w.sum(axis=1, keepdims=True) * a - w @ b
    gb = w.sum(axis=0)[:, None] * b - w.T @ a
    return ga, gb


def _bw_row_softmax(tape, node, nid, g):
    s = tape.values[nid]
    return (s * (g - (g * s).sum(axis=1, keepdims=True)),)


def _bw_row_log_softmax(tape, node, nid, g):
    mask = node.saved["mask"]
    (a,) = _vals(tape, node)
    s = _softmax_rows(a, mask)
    if mask is not None:
        g = np.where(mask, g, 0.0)
    return (g - s * g.sum(axis=1, keepdims=True),)


def _bw_cross_entropy(tape, node, nid, g):
    labels = node.saved["labels"]
    d = node.saved["probs"].copy()
    n = len(labels)
    d[np.arange(n), labels] -= 1.0
    if node.saved["reduction"] == "mean":
        d /= n
    return (d * g[0, 0],)


BACKWARD_RULES: dict[str, Callable] = {
    "add": _bw_add,
    "add_row": _bw_add_row,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "scale": _bw_scale,
    "neg": _bw_neg,
    "log": _bw_log,
    "exp": _bw_exp,
    "relu": _bw_relu,
    "matmul": _bw_matmul,
    "concat_rows": _bw_concat_rows,
    "take_rows": _bw_take_rows,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "pairwise_euclidean": _bw_pairwise,
    "row_softmax": _bw_row_softmax,
    "row_log_softmax": _bw_row_log_softmax,
    "cross_entropy": _bw_cross_entropy,
}


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = f(x)
        x[idx] = orig - step
        lo = f(x)
        x[idx] = orig
        out[idx] = (hi - lo) / (2 * step)
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), 0 when both vanish."""
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    if den < 1e-12:
        return float(num)
    return float(num / den)

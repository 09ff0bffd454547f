"""Finite-difference verification of every differentiable op and loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tape, numeric_grad, rel_error
from .losses import BatchContext, LossConfig, total_loss
from .model import BoundModel, ExtractorParams, HeadParams, embed

TOL = 1e-4
STEP = 1e-5
RELU_MARGIN = 1e-3
DIST_MARGIN = 1e-2     # sqrt(d^2 + eps) is sharply curved near coincident embeddings


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    seeds: int

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOL


def _check_inputs(build: Callable[[Tape, list], object], inputs: list[np.ndarray]) -> float:
    """Max relative error over all inputs of scalar-valued ``build``."""
    tape = Tape()
    vs = [tape.param(x) for x in inputs]
    loss = build(tape, vs)
    tape.backward(loss)
    worst = 0.0
    for k, x in enumerate(inputs):
        def f(xk, k=k):
            t = Tape()
            args = [t.param(xk if i == k else inputs[i]) for i in range(len(inputs))]
            return float(build(t, args).value[0, 0])
        worst = max(worst, rel_error(tape.grad(vs[k]), numeric_grad(f, x, STEP)))
    return worst


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 2, x)


def _mix(tape, v):
    """Reduce any matrix to a scalar with unequal weights (exposes transposes)."""
    w = np.arange(1, v.shape[0] * v.shape[1] + 1, dtype=float).reshape(v.shape) / (v.shape[0] * v.shape[1])
    return tape.sum(tape.mul(v, tape.const(w)))


def op_cases() -> dict[str, Callable[[np.random.Generator], tuple]]:
    """name -> rng -> (build, inputs)."""
    def unary(op):
        return lambda rng: (lambda t, v: _mix(t, getattr(t, op)(v[0])), [rng.normal(size=(3, 4))])

    return {
        "matmul": lambda rng: (lambda t, v: _mix(t, t.matmul(v[0], v[1])),
                               [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]),
        "add": lambda rng: (lambda t, v: _mix(t, t.add(v[0], v[1])),
                            [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))]),
        "add_row": lambda rng: (lambda t, v: _mix(t, t.add_row(v[0], v[1])),
                                [rng.normal(size=(3, 2)), rng.normal(size=(1, 2))]),
        "sub": lambda rng: (lambda t, v: _mix(t, t.sub(v[0], v[1])),
                            [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))]),
        "mul": lambda rng: (lambda t, v: _mix(t, t.mul(v[0], v[1])),
                            [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))]),
        "scale": lambda rng: (lambda t, v: _mix(t, t.scale(v[0], -1.7)), [rng.normal(size=(2, 3))]),
        "neg": unary("neg"),
        "exp": unary("exp"),
        "log": lambda rng: (lambda t, v: _mix(t, t.log(v[0])), [rng.uniform(0.5, 2.0, size=(3, 3))]),
        "relu": lambda rng: (lambda t, v: _mix(t, t.relu(v[0])), [_away_from_zero(rng, (3, 4))]),
        "sum": lambda rng: (lambda t, v: t.sum(t.mul(v[0], v[0])), [rng.normal(size=(2, 3))]),
        "mean": lambda rng: (lambda t, v: t.mean(t.mul(v[0], v[0])), [rng.normal(size=(2, 3))]),
        "concat_rows": lambda rng: (lambda t, v: _mix(t, t.concat_rows([v[0], v[1]])),
                                    [rng.normal(size=(2, 3)), rng.normal(size=(1, 3))]),
        "take_rows": lambda rng: (lambda t, v: _mix(t, t.take_rows(v[0], [2, 0, 2])),
                                  [rng.normal(size=(3, 2))]),
        "pairwise_euclidean": lambda rng: (lambda t, v: _mix(t, t.pairwise_euclidean(v[0], v[1])),
                                           [rng.normal(size=(4, 3)), rng.normal(size=(4, 3))]),
        "row_softmax": lambda rng: (lambda t, v: _mix(t, t.row_softmax(v[0])), [rng.normal(size=(3, 4))]),
        "row_log_softmax": lambda rng: (lambda t, v: _mix(t, t.row_log_softmax(
            v[0], mask=~np.eye(3, 4, dtype=bool))), [rng.normal(size=(3, 4))]),
        "cross_entropy": lambda rng: (lambda t, v: t.cross_entropy(v[0], np.array([0, 2, 1, 2, 0])),
                                      [rng.normal(size=(5, 3))]),
    }


def _loss_case(cfg: LossConfig, multi_head: bool = False, n: int = 4):
    """Full objective on a small batch, as a function of every model parameter."""
    def make(rng):
        width, emb = 5, 4
        ext = ExtractorParams.init(rng, width, (6, emb))
        for b in ext.biases:
            b += rng.normal(scale=0.1, size=b.shape)
        if multi_head:
            head = HeadParams("multi")
            head.add_task_head(rng, emb, 2)
            head.add_task_head(rng, emb, 2)
        else:
            head = HeadParams.single(rng, emb, 3)
        x = rng.normal(size=(n, width))
        while _min_preactivation(ext, x) < RELU_MARGIN or _min_gap(embed(ext, x)) < DIST_MARGIN:
            x = rng.normal(size=(n, width))
        labels = np.array([0, 1, 1, 0, 1, 0][:n])
        task_ids = np.array([0, 0, 1, 1, 0, 1][:n])
        prev = np.abs(rng.normal(size=(n, emb)))
        arrays = ext.arrays() + head.arrays()

        def build(tape, vs):
            bm = _bind_vars(tape, vs, len(ext.weights), head)
            ctx = BatchContext(x, labels, task_ids, bm.embed(x), prev)
            return total_loss(ctx, bm, cfg)[0]

        return build, [a.copy() for a in arrays]

    return make


def _min_preactivation(ext: ExtractorParams, x: np.ndarray) -> float:
    """Distance of the nearest hidden pre-activation from the ReLU kink."""
    h, worst = x, np.inf
    for w, b in zip(ext.weights, ext.biases):
        z = h @ w + b
        worst = min(worst, float(np.abs(z).min()))
        h = np.maximum(z, 0.0)
    return worst


def _min_gap(e: np.ndarray) -> float:
    d = np.sqrt(((e[:, None, :] - e[None, :, :]) ** 2).sum(axis=2))
    return float(d[~np.eye(len(e), dtype=bool)].min())


def _bind_vars(tape, vs, n_layers, head):
    ext = vs[: 2 * n_layers]
    hd = vs[2 * n_layers:]
    return BoundModel(tape, ext[0::2], ext[1::2], hd[0::2], hd[1::2], head)


def loss_cases() -> dict[str, Callable]:
    return {
        "replay_loss": _loss_case(LossConfig(w=0.4, eta=0.5)),
        "contrastive_rehearsal_loss": _loss_case(LossConfig(alpha=1.0, tau=0.7)),
        "supervised_contrastive_loss": _loss_case(LossConfig(beta=1.0, tau=0.7)),
        "total_loss[ccl-fp+]": _loss_case(LossConfig(w=0.3, eta=0.1, tau=0.1, alpha=0.5, beta=0.5)),
        "total_loss[ccl-fp+,multi-head]": _loss_case(
            LossConfig(w=0.3, eta=0.1, tau=1.0, alpha=0.5, beta=0.5), multi_head=True, n=6),
    }


def run_gradcheck(seeds: int = 20, include_losses: bool = True) -> list[CheckResult]:
    cases = dict(op_cases())
    if include_losses:
        cases.update(loss_cases())
    out = []
    for name, make in cases.items():
        worst = 0.0
        for s in range(seeds):
            build, inputs = make(np.random.default_rng(s))
            worst = max(worst, _check_inputs(build, inputs))
        out.append(CheckResult(name, worst, seeds))
    return out


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'check':<34} {'max rel err':>12}  status"]
    for r in results:
        lines.append(f"{r.name:<34} {r.max_rel_err:12.3e}  {'ok' if r.ok else 'FAIL'}")
    bad = [r for r in results if not r.ok]
    lines.append(f"{len(results) - len(bad)}/{len(results)} checks passed (tolerance {TOL:g})")
    return "\n".join(lines)

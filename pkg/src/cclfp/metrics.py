"""Average accuracy and forgetting from the accuracy matrix.

``R[i, j]`` is the test accuracy on task ``j`` after training through task
``i`` (0-based storage).  The public functions take ``t`` as a task *count*,
so ``average_accuracy(R, t)`` reads row ``t - 1``.
"""
from __future__ import annotations

import csv
import io
import json

import numpy as np


class MetricStateError(ValueError):
    pass


class AccuracyMatrix:
    """Lower-triangular accuracies; unset entries are NaN."""

    def __init__(self, n_tasks: int, n_rows: int | None = None):
        self.n_tasks = n_tasks
        self.R = np.full((n_tasks if n_rows is None else n_rows, n_tasks), np.nan)

    @classmethod
    def from_array(cls, R) -> "AccuracyMatrix":
        R = np.asarray(R, dtype=np.float64)
        m = cls(R.shape[1], R.shape[0])
        m.R[:] = R
        return m

    def set(self, row: int, task: int, acc: float) -> None:
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        self.R[row, task] = acc

    @property
    def rows_done(self) -> int:
        filled = ~np.isnan(self.R).all(axis=1)
        return int(filled.sum())

    def row(self, t: int) -> np.ndarray:
        return _row(self.R, t)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["after_task"] + [f"task_{j + 1}" for j in range(self.n_tasks)])
        for i in range(self.rows_done):
            w.writerow([i + 1] + ["" if np.isnan(v) else repr(float(v)) for v in self.R[i]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "AccuracyMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        body = [[np.nan if v == "" else float(v) for v in r[1:]] for r in rows[1:]]
        return cls.from_array(body)


def _as_array(R) -> np.ndarray:
    return R.R if isinstance(R, AccuracyMatrix) else np.asarray(R, dtype=np.float64)


def _row(R: np.ndarray, t: int) -> np.ndarray:
    if not 1 <= t <= R.shape[0]:
        raise MetricStateError(f"no row {t}")
    r = R[t - 1]
    r = r[~np.isnan(r)]
    if r.size == 0:
        raise MetricStateError(f"row {t} is not populated")
    return r


def last_row(R) -> int:
    R = _as_array(R)
    filled = np.flatnonzero(~np.isnan(R).all(axis=1))
    if filled.size == 0:
        raise MetricStateError("accuracy matrix is empty")
    return int(filled[-1]) + 1


def average_accuracy(R, t: int | None = None) -> float:
    """Mean accuracy over the tasks evaluated after training through task t."""
    R = _as_array(R)
    t = last_row(R) if t is None else t
    return float(_row(R, t).mean())


def forgetting(R, t: int | None = None) -> float:
    """Mean over k < t of (best earlier accuracy on k) - (accuracy on k after t)."""
    R = _as_array(R)
    t = last_row(R) if t is None else t
    if t < 2:
        raise MetricStateError("forgetting needs at least two tasks")
    cur = R[t - 1, : t - 1]
    best = np.nanmax(R[: t - 1, : t - 1], axis=0)
    if np.isnan(cur).any() or np.isnan(best).any():
        raise MetricStateError(f"rows 1..{t} are not populated")
    return float((best - cur).mean())


def summary(R, **extra) -> dict:
    """JSON-ready summary: final metrics plus per-task curves."""
    R = _as_array(R)
    t = last_row(R)
    acc_curve = [average_accuracy(R, i) for i in range(1, t + 1)]
    fgt_curve = [forgetting(R, i) for i in range(2, t + 1)] if t >= 2 and R.shape[0] == R.shape[1] else []
    return {
        "final_average_accuracy": acc_curve[-1],
        "final_forgetting": fgt_curve[-1] if fgt_curve else None,
        "average_accuracy_curve": acc_curve,
        "forgetting_curve": fgt_curve,
        **extra,
    }


def summary_json(R, **extra) -> str:
    return json.dumps(summary(R, **extra), indent=2)

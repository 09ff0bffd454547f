"""Fixed-capacity episodic memory maintained by reservoir sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Example:
    input: np.ndarray
    label: int
    task_id: int


class MemoryBuffer:
    """Reservoir over the stream of offered examples.

    Inputs are stored raw so that memory examples can be re-embedded by the
    current extractor.  Storage is allocated lazily on the first offer.
    """

    def __init__(self, capacity: int = 200, seed: int | np.random.SeedSequence | None = 0):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = int(capacity)
        self.seen = 0
        self.rng = np.random.default_rng(seed)
        self.inputs: np.ndarray | None = None
        self.labels = np.zeros(self.capacity, dtype=np.int64)
        self.task_ids = np.zeros(self.capacity, dtype=np.int64)

    def __len__(self) -> int:
        return min(self.capacity, self.seen)

    def _slot_for_next(self) -> int:
        """Reservoir decision for one new item; -1 means discard."""
        self.seen += 1
        if self.seen <= self.capacity:
            return self.seen - 1
        j = int(self.rng.integers(0, self.seen))
        return j if j < self.capacity else -1

    def offer(self, x, label: int, task_id: int) -> None:
        x = np.asarray(x, dtype=np.float64).ravel()
        if self.inputs is None:
            self.inputs = np.zeros((self.capacity, x.size))
        slot = self._slot_for_next()
        if slot >= 0:
            self.inputs[slot] = x
            self.labels[slot] = label
            self.task_ids[slot] = task_id

    def offer_batch(self, xs: np.ndarray, labels, task_ids) -> None:
        for x, y, t in zip(xs, labels, task_ids):
            self.offer(x, int(y), int(t))

    def sample(self, k: int, rng: np.random.Generator | None = None):
        """Draw ``k`` stored examples: without replacement when possible.

        Returns ``(inputs, labels, task_ids)`` arrays; all empty when the
        buffer is empty or ``k`` is 0.
        """
        rng = self.rng if rng is None else rng
        n = len(self)
        if n == 0 or k <= 0:
            width = 0 if self.inputs is None else self.inputs.shape[1]
            return np.zeros((0, width)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        idx = rng.choice(n, size=k, replace=k > n)
        return self.inputs[idx].copy(), self.labels[idx].copy(), self.task_ids[idx].copy()

    def examples(self) -> list[Example]:
        n = len(self)
        return [Example(self.inputs[i].copy(), int(self.labels[i]), int(self.task_ids[i]))
                for i in range(n)]

    # persistence alongside the model checkpoint

    def state_dict(self) -> dict[str, np.ndarray]:
        n = len(self)
        width = 0 if self.inputs is None else self.inputs.shape[1]
        return {
            "capacity": np.array(self.capacity),
            "seen": np.array(self.seen),
            "inputs": self.inputs[:n] if self.inputs is not None else np.zeros((0, width)),
            "labels": self.labels[:n],
            "task_ids": self.task_ids[:n],
            "rng": np.array(_encode_rng(self.rng)),
        }

    @classmethod
    def from_state(cls, state: dict) -> "MemoryBuffer":
        buf = cls(int(state["capacity"]))
        buf.seen = int(state["seen"])
        n = len(buf)
        if state["inputs"].shape[1]:
            buf.inputs = np.zeros((buf.capacity, state["inputs"].shape[1]))
            buf.inputs[:n] = state["inputs"]
        buf.labels[:n] = state["labels"]
        buf.task_ids[:n] = state["task_ids"]
        buf.rng.bit_generator.state = _decode_rng(str(state["rng"]))
        return buf


def _encode_rng(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state)


def _decode_rng(s: str) -> dict:
    return json.loads(s)

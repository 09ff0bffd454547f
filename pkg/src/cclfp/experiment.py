"""Experiment configuration, stream construction and per-seed artifacts.

Config files are plain ``key = value`` lines; ``#`` starts a comment.
A ``manifest.json`` written by a run is accepted as a config as well.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import (DEFAULT_PAIRS, TaskStream, build_permuted, build_rotated, build_split,
                   build_synthetic, load_mnist, stream_digest)
from .losses import LossConfig
from .metrics import summary
from .trainer import METHODS, ConfigError, TrainConfig, run_scenario

DATASET_SCENARIOS = {
    "split-mnist": ("class-il", "task-il"),
    "permuted-mnist": ("domain-il",),
    "rotated-mnist": ("domain-il",),
    "synthetic": ("class-il", "task-il", "domain-il"),
}
STEP_HEADER = ("task", "step", "er", "cl", "scl", "total")


@dataclass
class ExperimentConfig:
    dataset: str = "split-mnist"
    scenario: str = "class-il"
    method: str = "ccl-fp+"
    seeds: list[int] = field(default_factory=lambda: [0])
    w: float = 0.3
    eta: float = 0.1
    tau: float | None = None        # None: 0.1, or 1.0 for domain-il
    alpha: float = 0.1
    beta: float = 0.1
    lr: float = 0.03
    batch_size: int = 10
    memory_batch_size: int = 10
    buffer: int = 200
    hidden: list[int] = field(default_factory=lambda: [100, 100])
    mask_unseen: bool = False
    data: str = ""
    out: str = "runs/experiment"
    label: str = ""
    # permuted / rotated
    task_count: int = 20
    per_task: int = 1000
    test_per_task: int = 1000
    identity_first: bool = True
    # synthetic
    classes_per_task: int = 2
    per_class: int = 100
    width: int = 20
    shift: float = 0.0
    separation: float = 4.0
    synthetic_tasks: int = 5
    log_steps: bool = True

    def resolved_tau(self) -> float:
        if self.tau is not None:
            return self.tau
        return 1.0 if self.scenario == "domain-il" else 0.1

    def resolved_label(self) -> str:
        if self.label:
            return self.label
        if self.method not in ("ccl-fp", "ccl-fp+"):
            return self.method
        names = ["w", "alpha"] + (["beta"] if self.method == "ccl-fp+" else [])
        on = [n for n in names if getattr(self, n) > 0]
        return self.method if on == names else f"{self.method}[{','.join(on) or 'none'}]"

    def loss_config(self) -> LossConfig:
        return LossConfig(w=self.w, eta=self.eta, tau=self.resolved_tau(), alpha=self.alpha, beta=self.beta)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(method=self.method, loss=self.loss_config(), batch_size=self.batch_size,
                           memory_batch_size=self.memory_batch_size, lr=self.lr,
                           buffer_capacity=self.buffer, seed=seed, hidden=tuple(self.hidden),
                           mask_unseen=self.mask_unseen)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tau"] = self.resolved_tau()
        d["label"] = self.resolved_label()
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(name: str, raw: str):
    default = getattr(ExperimentConfig(), name)
    raw = raw.strip()
    if name in ("seeds", "hidden"):
        return [int(v) for v in raw.replace(",", " ").split()]
    if name == "tau":
        return None if raw.lower() in ("", "auto", "none") else float(raw)
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> tuple[ExperimentConfig, dict[str, int]]:
    """Parse ``key = value`` text; returns the config and the line of each key."""
    cfg = ExperimentConfig()
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _parse_value(key, raw))
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}") from None
        lines[key] = lineno
    return cfg, lines


def load_config(path) -> tuple[ExperimentConfig, dict[str, int]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    if path.suffix == ".json":
        blob = json.loads(path.read_text())
        d = dict(blob.get("config", blob))
        if "seed" in blob:
            d["seeds"] = [blob["seed"]]
        unknown = set(d) - set(_FIELDS)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        return ExperimentConfig(**d), {}
    return parse_config(path.read_text(), str(path))


def validate_config(cfg: ExperimentConfig, lines: dict[str, int] | None = None, source: str = "<config>") -> None:
    lines = lines or {}

    def fail(key, msg):
        where = f"{source}:{lines[key]}" if key in lines else source
        raise ConfigError(f"{where}: {msg}")

    if cfg.dataset not in DATASET_SCENARIOS:
        fail("dataset", f"unknown dataset {cfg.dataset!r}; expected one of {sorted(DATASET_SCENARIOS)}")
    allowed = DATASET_SCENARIOS[cfg.dataset]
    if cfg.scenario not in allowed:
        fail("scenario", f"dataset {cfg.dataset} supports scenarios {list(allowed)}, not {cfg.scenario!r}")
    if cfg.method not in METHODS:
        fail("method", f"unknown method {cfg.method!r}; expected one of {list(METHODS)}")
    if cfg.mask_unseen and cfg.scenario != "class-il":
        fail("mask_unseen", "mask_unseen only applies to class-il")
    if not cfg.seeds:
        fail("seeds", "at least one seed is required")
    if cfg.dataset != "synthetic" and not cfg.data:
        fail("data", f"dataset {cfg.dataset} needs a data directory with MNIST IDX files")
    if any(h < 1 for h in cfg.hidden):
        fail("hidden", "hidden widths must be positive")
    checks = [
        ("w", 0.0 <= cfg.w < 1.0, "w must lie in [0, 1)"),
        ("eta", cfg.eta > 0, "eta must be positive"),
        ("tau", cfg.resolved_tau() > 0, "tau must be positive"),
        ("alpha", cfg.alpha >= 0, "alpha must be non-negative"),
        ("beta", cfg.beta >= 0, "beta must be non-negative"),
        ("lr", cfg.lr >= 0, "lr must be non-negative"),
        ("buffer", cfg.buffer >= 0, "buffer must be non-negative"),
        ("batch_size", cfg.batch_size >= 1, "batch_size must be at least 1"),
        ("memory_batch_size", cfg.memory_batch_size >= 0, "memory_batch_size must be non-negative"),
    ]
    for key, ok, msg in checks:
        if not ok:
            fail(key, msg)


def build_stream(cfg: ExperimentConfig, seed: int, mnist=None) -> TaskStream:
    if cfg.dataset == "synthetic":
        return build_synthetic(cfg.synthetic_tasks, cfg.classes_per_task, cfg.per_class, cfg.width,
                               cfg.shift, seed, cfg.scenario, cfg.separation)
    train, test = mnist if mnist is not None else load_mnist(cfg.data)
    if cfg.dataset == "split-mnist":
        return build_split(train, test, DEFAULT_PAIRS, cfg.scenario)
    builder = build_permuted if cfg.dataset == "permuted-mnist" else build_rotated
    return builder(train, test, cfg.task_count, cfg.per_task, seed, cfg.test_per_task, cfg.identity_first)


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: Path | None = None, mnist=None) -> dict:
    """Run one seed; write artifacts when ``out_dir`` is given.  Returns the summary."""
    t0 = time.perf_counter()
    stream = build_stream(cfg, seed, mnist)
    result = run_scenario(stream, cfg.train_config(seed))
    elapsed = time.perf_counter() - t0
    info = summary(result.R, method=cfg.method, label=cfg.resolved_label(), dataset=cfg.dataset,
                   scenario=cfg.scenario, seed=seed, runtime_sec=elapsed,
                   examples_seen=result.state.examples_seen)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "R.csv").write_text(result.R.to_csv())
        (out_dir / "summary.json").write_text(json.dumps(info, indent=2))
        manifest = {"config": {**cfg.to_dict(), "seeds": [seed]}, "seed": seed,
                    "stream": stream.manifest, "stream_sha1": stream_digest(stream),
                    "cclfp_version": __version__, "numpy_version": np.__version__}
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
        if cfg.log_steps:
            with open(out_dir / "steps.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(STEP_HEADER)
                w.writerows((t, s, repr(er), repr(cl), repr(scl), repr(tot))
                            for t, s, er, cl, scl, tot in result.steps)
    return info


def aggregate(summaries: list[dict]) -> dict:
    """Mean and sample standard deviation over seeds (std is 0 for one run)."""
    def stats(key):
        vals = np.array([s[key] for s in summaries if s.get(key) is not None], dtype=float)
        if vals.size == 0:
            return None, None
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        return float(vals.mean()), std

    acc_m, acc_s = stats("final_average_accuracy")
    fgt_m, fgt_s = stats("final_forgetting")
    first = summaries[0]
    return {"label": first["label"], "method": first["method"], "dataset": first["dataset"],
            "scenario": first["scenario"], "seeds": [s["seed"] for s in summaries],
            "accuracy_mean": acc_m, "accuracy_std": acc_s,
            "forgetting_mean": fgt_m, "forgetting_std": fgt_s}

"""Shared driver for the experiment scripts: run cells, aggregate, print a table."""
import argparse
import json
from pathlib import Path

from cclfp.cli import compare_table
from cclfp.data import load_mnist
from cclfp.experiment import aggregate, run_seed, validate_config


def parser(doc):
    ap = argparse.ArgumentParser(description=doc)
    ap.add_argument("--data", default="/root/data/mnist", help="directory holding the MNIST IDX files")
    ap.add_argument("--out", default="runs")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    return ap


def run_cells(configs, out_root, data_dir):
    """Run every config over its seeds; returns the aggregated cells."""
    mnist = load_mnist(data_dir)
    cells = []
    for cfg in configs:
        validate_config(cfg)
        name = f"{cfg.dataset}_{cfg.scenario}_{cfg.resolved_label()}_buf{cfg.buffer}"
        summaries = [run_seed(cfg, s, Path(out_root) / name / f"seed_{s}", mnist) for s in cfg.seeds]
        cell = aggregate(summaries)
        cells.append(cell)
        (Path(out_root) / name / "aggregate.json").write_text(json.dumps(cell, indent=2))
        print(f"{name}: {100 * cell['accuracy_mean']:.2f} ± {100 * cell['accuracy_std']:.2f}", flush=True)
    return cells


def report(cells, out_root, title):
    table = compare_table(cells)
    print(f"\n{title}\n{table}")
    Path(out_root, "table.md").write_text(f"{title}\n\n{table}\n")

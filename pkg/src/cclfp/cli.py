"""Command line: ``cclfp run | compare | gradcheck``.

Exit codes: 0 success, 1 config error, 2 data error, 3 numerical-check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import IngestionError, StreamConfigError
from .experiment import aggregate, load_config, run_seed, validate_config
from .gradcheck import format_report, run_gradcheck
from .trainer import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("cclfp")


def cmd_run(args) -> int:
    if args.config:
        cfg, lines = load_config(args.config)
        source = args.config
    else:
        from .experiment import ExperimentConfig
        cfg, lines, source = ExperimentConfig(), {}, "<flags>"
    if args.seed:
        cfg.seeds = list(args.seed)
    if args.method:
        cfg.method = args.method
    if args.buffer is not None:
        cfg.buffer = args.buffer
    if args.out:
        cfg.out = args.out
    if args.data:
        cfg.data = args.data
    validate_config(cfg, lines, source)
    out = Path(cfg.out)
    mnist = None
    if cfg.dataset != "synthetic":
        from .data import load_mnist
        mnist = load_mnist(cfg.data)
    summaries = []
    for seed in cfg.seeds:
        info = run_seed(cfg, seed, out / f"seed_{seed}", mnist)
        summaries.append(info)
        fgt = info["final_forgetting"]
        print(f"seed {seed}: average accuracy {100 * info['final_average_accuracy']:.2f}%"
              + (f", forgetting {100 * fgt:.2f}%" if fgt is not None else "")
              + f" ({info['runtime_sec']:.1f}s)")
    agg = aggregate(summaries)
    (out / "aggregate.json").write_text(json.dumps(agg, indent=2))
    print(f"{agg['label']} {cfg.dataset} {cfg.scenario}: "
          f"{100 * agg['accuracy_mean']:.2f} ± {100 * agg['accuracy_std']:.2f} over {len(summaries)} seed(s)")
    return EXIT_OK


def collect_cell(run_dir: Path) -> dict:
    """Aggregate every summary.json below ``run_dir``; they must agree on the cell."""
    files = sorted(run_dir.rglob("summary.json"))
    if not files:
        raise ConfigError(f"{run_dir}: no summary.json found")
    summaries = [json.loads(f.read_text()) for f in files]
    keys = {(s["label"], s["dataset"], s["scenario"]) for s in summaries}
    if len(keys) > 1:
        raise ConfigError(f"{run_dir}: mixes runs from different cells {sorted(keys)}")
    return aggregate(summaries)


def _fmt(mean, std):
    return "--" if mean is None else f"{100 * mean:.2f} ± {100 * std:.2f}"


def compare_table(cells: list[dict]) -> str:
    cols = []
    for c in cells:
        col = (c["dataset"], c["scenario"])
        if col not in cols:
            cols.append(col)
    rows: dict[str, dict] = {}
    for c in cells:
        rows.setdefault(c["label"], {})[(c["dataset"], c["scenario"])] = c
    head = ["method"] + [f"{d} {s} acc" for d, s in cols] + [f"{d} {s} fgt" for d, s in cols]
    body = []
    for label, by_col in rows.items():
        accs = [_fmt(by_col[c]["accuracy_mean"], by_col[c]["accuracy_std"]) if c in by_col else "" for c in cols]
        fgts = [_fmt(by_col[c]["forgetting_mean"], by_col[c]["forgetting_std"]) if c in by_col else "" for c in cols]
        body.append([label] + accs + fgts)
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    line = lambda r: "| " + " | ".join(v.ljust(w) for v, w in zip(r, widths)) + " |"
    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(head), sep] + [line(r) for r in body])


def cmd_compare(args) -> int:
    cells = [collect_cell(Path(d)) for d in args.run_dirs]
    table = compare_table(cells)
    print(table)
    if args.output:
        Path(args.output).write_text(table + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(seeds=args.seeds)
    print(format_report(results))
    return EXIT_OK if all(r.ok for r in results) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cclfp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate one configuration over seeds")
    run.add_argument("--config", help="key = value config file or a manifest.json")
    run.add_argument("--seed", type=int, action="append", help="repeatable; replaces config seeds")
    run.add_argument("--method")
    run.add_argument("--buffer", type=int)
    run.add_argument("--out")
    run.add_argument("--data", help="directory holding the MNIST IDX files")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="mean ± std table over run directories")
    cmp_.add_argument("run_dirs", nargs="+")
    cmp_.add_argument("--output", help="also write the table here")
    cmp_.set_defaults(func=cmd_compare)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every op and loss")
    gc.add_argument("--seeds", type=int, default=20)
    gc.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, StreamConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

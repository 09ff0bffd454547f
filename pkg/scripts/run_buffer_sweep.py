"""ER and CCL-FP+ on Split MNIST class-IL across memory sizes.

    python scripts/run_buffer_sweep.py --data /root/data/mnist --out runs/buffer
"""
from _common import parser, report, run_cells

from cclfp.presets import experiment


def main():
    ap = parser(__doc__)
    ap.add_argument("--buffers", type=int, nargs="+", default=[200, 500, 1000])
    args = ap.parse_args()
    configs = [experiment("split-mnist", "class-il", m, data=args.data, seeds=args.seeds, buffer=b)
               for m in ("er", "ccl-fp+") for b in args.buffers]
    cells = run_cells(configs, args.out, args.data)
    for c, cfg in zip(cells, configs):
        c["label"] = f"{c['label']} (M={cfg.buffer})"
    report(cells, args.out, "Buffer size sweep, Split MNIST class-IL (%)")


if __name__ == "__main__":
    main()

"""Main comparison: every method on Split MNIST (class-IL and task-IL) and
Permuted / Rotated MNIST (domain-IL).

    python scripts/run_table1.py --data /root/data/mnist --out runs/table1
"""
from _common import parser, report, run_cells

from cclfp.presets import experiment
from cclfp.trainer import METHODS

CELLS = [("split-mnist", "class-il"), ("split-mnist", "task-il"),
         ("permuted-mnist", "domain-il"), ("rotated-mnist", "domain-il")]


def main():
    ap = parser(__doc__)
    ap.add_argument("--methods", nargs="+", default=list(METHODS))
    args = ap.parse_args()
    configs = [experiment(d, s, m, data=args.data, seeds=args.seeds)
               for d, s in CELLS for m in args.methods]
    report(run_cells(configs, args.out, args.data), args.out, "Average accuracy / forgetting (%)")


if __name__ == "__main__":
    main()

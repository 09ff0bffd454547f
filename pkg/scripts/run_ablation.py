"""Switch propagation (w), contrastive rehearsal (alpha) and supervised
contrastive (beta) on and off independently on Split MNIST class-IL.

    python scripts/run_ablation.py --data /root/data/mnist --out runs/ablation
"""
import itertools

from _common import parser, report, run_cells

from cclfp.presets import TUNED, experiment


def main():
    args = parser(__doc__).parse_args()
    tuned = TUNED[("split-mnist", "class-il")]
    configs = []
    for on in itertools.product((False, True), repeat=3):
        coef = {k: (tuned[k] if flag else 0.0) for k, flag in zip(("w", "alpha", "beta"), on)}
        configs.append(experiment("split-mnist", "class-il", "ccl-fp+", data=args.data, seeds=args.seeds, **coef))
    report(run_cells(configs, args.out, args.data), args.out, "Ablation, Split MNIST class-IL (%)")


if __name__ == "__main__":
    main()

"""Hyperparameter search on a validation split of MNIST-train with held-out seeds.

The last 10k training images stand in for the test set, so test data never
influences the chosen values.

    python scripts/tune.py --data /root/data/mnist --what lr
    python scripts/tune.py --data /root/data/mnist --what grid --scenario class-il
"""
import argparse
import itertools
import json
import time

from cclfp.data import LabeledSet, build_rotated, build_split, load_mnist
from cclfp.losses import LossConfig
from cclfp.metrics import average_accuracy
from cclfp.trainer import TrainConfig, run_scenario

W_GRID = (0.1, 0.3, 0.5)
COEF_GRID = (0.01, 0.1, 0.5, 1.0)


def validation_sets(data_dir):
    train, _ = load_mnist(data_dir)
    fit = LabeledSet(train.x[:50000], train.y[:50000])
    val = LabeledSet(train.x[50000:], train.y[50000:])
    return fit, val


def score(stream, cfg, seeds):
    return sum(average_accuracy(run_scenario(stream, cfg.__class__(**{**cfg.__dict__, "seed": s})).R)
               for s in seeds) / len(seeds)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", required=True)
    ap.add_argument("--what", choices=["lr", "grid"], default="grid")
    ap.add_argument("--scenario", default="class-il")
    ap.add_argument("--seeds", type=int, nargs="+", default=[100])
    ap.add_argument("--lr", type=float, default=0.03)
    ap.add_argument("--methods", nargs="+", default=["er", "ccl-fp+"])
    args = ap.parse_args()
    fit, val = validation_sets(args.data)
    if args.scenario == "domain-il":
        stream = build_rotated(fit, val, seed=100)
        eta, tau = 0.1, 1.0
    else:
        stream = build_split(fit, val, scenario=args.scenario)
        eta, tau = 0.1, 0.1
    results = []
    if args.what == "lr":
        for method, lr in itertools.product(args.methods, (0.01, 0.03, 0.05, 0.1)):
            cfg = TrainConfig(method=method, lr=lr, loss=LossConfig(w=0.3, eta=eta, tau=tau, alpha=0.1, beta=0.1))
            t0 = time.time()
            acc = score(stream, cfg, args.seeds)
            results.append({"method": method, "lr": lr, "acc": acc})
            print(json.dumps(results[-1]), f"{time.time() - t0:.1f}s", flush=True)
    else:
        for w, a, b in itertools.product(W_GRID, COEF_GRID, COEF_GRID):
            cfg = TrainConfig(method="ccl-fp+", lr=args.lr, loss=LossConfig(w=w, eta=eta, tau=tau, alpha=a, beta=b))
            acc = score(stream, cfg, args.seeds)
            results.append({"w": w, "alpha": a, "beta": b, "acc": acc})
            print(json.dumps(results[-1]), flush=True)
        best = max(results, key=lambda r: r["acc"])
        print("best", json.dumps(best))


if __name__ == "__main__":
    main()

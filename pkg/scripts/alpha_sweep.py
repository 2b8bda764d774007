"""Test accuracy of the cross-modal model as a function of the fusion strength alpha.

    python scripts/alpha_sweep.py --alphas 0,0.5,1,1.5,2 --seeds 0,1 --out runs/alpha
"""

import argparse
import csv
import logging
from dataclasses import replace
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from spikefuse.config import load_config  # noqa: E402
from spikefuse.data import dataset_from_config  # noqa: E402
from spikefuse.experiments import run_variant  # noqa: E402


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", default="configs/desk.json")
    p.add_argument("--alphas", default="0,0.5,1,1.5,2")
    p.add_argument("--seeds", default="0,1")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", default="runs/alpha")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = load_config(args.config)
    if args.epochs is not None:
        base = replace(base, train=replace(base.train, epochs=args.epochs))
    dataset = dataset_from_config(base.data, base.model.image_size, base.model.T)
    alphas = [float(a) for a in args.alphas.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    means = []
    with open(out / "alpha.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "seed", "test_acc", "final_ce"])
        for alpha in alphas:
            cfg = replace(base, model=replace(base.model, alpha=alpha))
            accs = []
            for seed in seeds:
                rec = run_variant(cfg, "scmrl", seed, dataset)
                w.writerow([alpha, seed, f"{rec.test_acc:.4f}", f"{rec.final_ce:.5f}"])
                accs.append(rec.test_acc)
            means.append(float(np.mean(accs)))
            print(f"alpha={alpha:g} mean_test_acc={means[-1]:.4f}")

    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(alphas, means, marker="o")
    ax.set_xlabel("alpha")
    ax.set_ylabel("mean test accuracy")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out / "alpha.svg")


if __name__ == "__main__":
    main()

"""Noise robustness: train each variant once, then evaluate the held-out split
under additive Gaussian noise at several SNRs.

    python scripts/snr_sweep.py --variants scmrl,baseline --snrs 0,5,10,20,30 --out runs/snr
"""

import argparse
import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from spikefuse.config import load_config  # noqa: E402
from spikefuse.data import dataset_from_config  # noqa: E402
from spikefuse.experiments import train_config, variant_config  # noqa: E402
from spikefuse.training import snr_sweep  # noqa: E402


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", default="configs/desk.json")
    p.add_argument("--variants", default="scmrl,baseline")
    p.add_argument("--snrs", default="0,5,10,15,20,30")
    p.add_argument("--target", choices=("audio", "visual", "both"), default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/snr")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = load_config(args.config)
    dataset = dataset_from_config(base.data, base.model.image_size, base.model.T)
    snrs = [float(s) for s in args.snrs.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    with open(out / "snr.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "snr", "accuracy"])
        for variant in args.variants.split(","):
            model, res = train_config(variant_config(base, variant, args.seed), dataset)
            rows = snr_sweep(model, dataset, snrs, res.test_idx, args.target)
            for snr, acc in rows:
                w.writerow([variant, snr, f"{acc:.4f}"])
                print(f"{variant} snr={snr:g} accuracy={acc:.4f}")
            ax.plot([r[0] for r in rows], [r[1] for r in rows], marker="o", label=variant)

    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out / "snr.svg")


if __name__ == "__main__":
    main()

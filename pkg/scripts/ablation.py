"""Train every model variant over several seeds and tabulate test accuracy.

    python scripts/ablation.py --config configs/desk.json --seeds 0,1,2 --out runs/ablation
"""

import argparse
import logging
from pathlib import Path

from spikefuse.config import load_config
from spikefuse.experiments import VARIANTS, mean_accuracy, run_ablation, write_records


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", default="configs/desk.json")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--out", default="runs/ablation")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    records = run_ablation(load_config(args.config), [int(s) for s in args.seeds.split(",")],
                           args.variants.split(","))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(records, out / "ablation.csv")
    for name, acc in mean_accuracy(records).items():
        secs = sum(r.seconds for r in records if r.variant == name)
        print(f"{name:14s} mean_test_acc={acc:.4f} total_seconds={secs:.0f}")


if __name__ == "__main__":
    main()

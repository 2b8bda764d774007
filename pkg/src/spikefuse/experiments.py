"""Multi-seed comparison runs shared by the scripts and the acceptance suite."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, dataset_from_config
from .model import Model, build_model
from .training import TrainResult, train

log = logging.getLogger(__name__)

# name -> (mode, sao)
VARIANTS = {
    "scmrl": ("scmrl", True),
    "scmrl_no_sao": ("scmrl", False),
    "baseline": ("baseline", False),
    "audio": ("audio", False),
    "visual": ("visual", False),
}


@dataclass
class RunRecord:
    variant: str
    seed: int
    test_acc: float
    final_ce: float
    seconds: float


def variant_config(base: ExperimentConfig, variant: str, seed: int) -> ExperimentConfig:
    mode, sao = VARIANTS[variant]
    return replace(base, model=replace(base.model, mode=mode, sao=sao, seed=seed),
                   train=replace(base.train, seed=seed))


def train_config(cfg: ExperimentConfig, dataset: Dataset | None = None) -> tuple[Model, TrainResult]:
    if dataset is None:
        dataset = dataset_from_config(cfg.data, cfg.model.image_size, cfg.model.T)
    model = build_model(cfg.model)
    # test accuracy only after the last epoch
    return model, train(model, dataset, cfg.train, cfg, eval_every=cfg.train.epochs)


def run_variant(base: ExperimentConfig, variant: str, seed: int, dataset: Dataset | None = None) -> RunRecord:
    _, res = train_config(variant_config(base, variant, seed), dataset)
    last = res.history[-1]
    log.info("%s seed %d: test %.3f in %.0f s", variant, seed, last["test_acc"], res.seconds)
    return RunRecord(variant, seed, last["test_acc"], last["ce"], res.seconds)


def run_ablation(base: ExperimentConfig, seeds=(0, 1, 2), variants=tuple(VARIANTS)) -> list[RunRecord]:
    """Every variant for every seed on one shared dataset (the data seed stays fixed)."""
    dataset = dataset_from_config(base.data, base.model.image_size, base.model.T)
    return [run_variant(base, v, s, dataset) for v in variants for s in seeds]


def mean_accuracy(records: list[RunRecord]) -> dict[str, float]:
    out: dict[str, list[float]] = {}
    for r in records:
        out.setdefault(r.variant, []).append(r.test_acc)
    return {k: float(np.mean(v)) for k, v in out.items()}


def write_records(records: list[RunRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "test_acc", "final_ce", "seconds"])
        for r in records:
            w.writerow([r.variant, r.seed, f"{r.test_acc:.4f}", f"{r.final_ce:.5f}", f"{r.seconds:.1f}"])

"""Training loop, evaluation and noise sweeps."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tf
from .checkpoint import Checkpoint
from .config import ExperimentConfig, ModelConfig, NoiseConfig, TrainConfig
from .data import Dataset, split_indices
from .losses import SaoConfig, total_loss
from .model import Model, forward
from .optim import Adam

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "ce", "sao", "total", "train_acc", "test_acc")


class TrainingDiverged(RuntimeError):
    """Loss became NaN or infinite."""


def sao_config(cfg: ModelConfig) -> SaoConfig:
    return SaoConfig(temperature=cfg.sao_temperature, enabled=cfg.uses_sao, symmetric=cfg.sao_symmetric)


@dataclass
class EvalResult:
    accuracy: float
    per_class: dict[str, float]
    confusion: np.ndarray
    n: int


def evaluate(model: Model, dataset: Dataset, indices=None, noise: NoiseConfig | None = None,
             batch_size: int = 64) -> EvalResult:
    idx = np.arange(len(dataset)) if indices is None else np.asarray(indices, dtype=int)
    if idx.size == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    was_training = model.training
    model.eval()
    preds = []
    try:
        with tf.no_grad():
            for start in range(0, idx.size, batch_size):
                batch = dataset.batch(idx[start:start + batch_size], noise)
                logits, _, _ = forward(model, batch)
                preds.append(logits.data.argmax(axis=1))
    finally:
        model.train(was_training)
    pred = np.concatenate(preds)
    truth = dataset.labels[idx]
    C = dataset.num_classes
    confusion = np.zeros((C, C), dtype=int)
    np.add.at(confusion, (truth, pred), 1)
    per_class = {}
    for k, name in enumerate(dataset.class_names):
        total = confusion[k].sum()
        per_class[name] = float(confusion[k, k] / total) if total else float("nan")
    return EvalResult(float(np.mean(pred == truth)), per_class, confusion, int(idx.size))


@dataclass
class TrainResult:
    history: list[dict]
    checkpoint: Checkpoint
    train_idx: np.ndarray
    test_idx: np.ndarray
    seconds: float = 0.0
    optimizer: Adam | None = field(default=None, repr=False)


def train(model: Model, dataset: Dataset, cfg: TrainConfig, experiment: ExperimentConfig | None = None,
          train_idx=None, test_idx=None, eval_every: int = 1) -> TrainResult:
    """Adam on ``L_ce + L_sao`` with a seeded shuffle per epoch."""
    t_start = time.time()
    if train_idx is None:
        train_idx, test_idx = split_indices(len(dataset), cfg.train_fraction, cfg.seed)
    train_idx = np.asarray(train_idx, dtype=int)
    test_idx = np.asarray(test_idx if test_idx is not None else [], dtype=int)
    sao = sao_config(model.cfg)
    if sao.enabled and cfg.batch_size < 2:
        raise ValueError("SAO needs batch_size >= 2")
    opt = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    model.train()
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(train_idx)
        sums = {"ce": 0.0, "sao": 0.0, "total": 0.0}
        correct = seen = 0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            batch = dataset.batch(idx)
            logits, res_a, res_v = forward(model, batch)
            loss = total_loss(logits, batch.labels, res_a, res_v, sao)
            values = loss.values()
            if not all(math.isfinite(v) for v in values.values()):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch starting {start}: {values}; "
                    f"max |logit| = {np.abs(logits.data).max():.3g}"
                )
            opt.zero_grad()
            loss.total.backward()
            opt.step()
            for k, v in values.items():
                sums[k] += v * idx.size
            correct += int((logits.data.argmax(axis=1) == batch.labels).sum())
            seen += idx.size
        row = {k: sums[k] / max(seen, 1) for k in sums}
        row["epoch"] = epoch
        row["train_acc"] = correct / max(seen, 1)
        if test_idx.size and (epoch % eval_every == 0 or epoch == cfg.epochs):
            row["test_acc"] = evaluate(model, dataset, test_idx).accuracy
        else:
            row["test_acc"] = float("nan")
        history.append(row)
        log.info("epoch %d ce %.4f sao %.4f train %.3f test %.3f", epoch, row["ce"], row["sao"],
                 row["train_acc"], row["test_acc"])
    config = experiment.to_dict() if experiment is not None else {"model": asdict(model.cfg), "train": asdict(cfg)}
    ckpt = Checkpoint(model.state_dict(), config, cfg.epochs, opt.state())
    return TrainResult(history, ckpt, train_idx, test_idx, time.time() - t_start, opt)


def write_metrics(history: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in METRIC_FIELDS})


def snr_sweep(model: Model, dataset: Dataset, snrs, indices=None, target: str = "both",
              seed: int = 0) -> list[tuple[float, float]]:
    """Accuracy per SNR; ``inf`` means the clean input."""
    rows = []
    for snr in snrs:
        noise = None if math.isinf(snr) else NoiseConfig(snr_db=float(snr), target=target, seed=seed)
        rows.append((float(snr), evaluate(model, dataset, indices, noise).accuracy))
    return rows


def write_sweep(rows, csv_path: str | Path, svg_path: str | Path | None = None) -> None:
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["snr", "accuracy"])
        writer.writerows(rows)
    if svg_path is not None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        finite = [(s, a) for s, a in rows if math.isfinite(s)]
        fig, ax = plt.subplots(figsize=(4, 3))
        if finite:
            ax.plot([s for s, _ in finite], [a for _, a in finite], marker="o")
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.02)
        fig.tight_layout()
        fig.savefig(svg_path, format="svg")
        plt.close(fig)

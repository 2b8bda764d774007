"""Command-line entry point: ``spikefuse {train,eval,sweep,gradcheck,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tensor as tf
from .checkpoint import load_checkpoint, save_checkpoint
from .config import MODES, ExperimentConfig, NoiseConfig, load_config, save_config
from .data import dataset_from_config, save_dataset, split_indices, synth_dataset
from .gradcheck import grad_check
from .model import Batch, build_model
from .training import evaluate, snr_sweep, train, write_metrics, write_sweep

log = logging.getLogger("spikefuse")


def _limit_threads():
    n = os.environ.get("SPIKEFUSE_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    import numba

    numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
    return threadpool_limits(int(n))


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    model, train_cfg = cfg.model, cfg.train
    if args.mode:
        model = replace(model, mode=args.mode)
    if args.no_sao:
        model = replace(model, sao=False)
    if args.alpha is not None:
        model = replace(model, alpha=args.alpha)
    if args.seed is not None:
        model = replace(model, seed=args.seed)
        train_cfg = replace(train_cfg, seed=args.seed)
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    return replace(cfg, model=model, train=train_cfg)


def restore(path) -> tuple[ExperimentConfig, object, object]:
    """Checkpoint -> (config, model in eval mode, dataset named by the config)."""
    ckpt = load_checkpoint(path)
    cfg = ExperimentConfig.from_dict(ckpt.config)
    model = build_model(cfg.model)
    model.load_state_dict(ckpt.model_state)
    model.eval()
    return cfg, model, dataset_from_config(cfg.data, cfg.model.image_size, cfg.model.T)


def _test_indices(cfg: ExperimentConfig, n: int, split: str):
    train_idx, test_idx = split_indices(n, cfg.train.train_fraction, cfg.train.seed)
    return {"test": test_idx, "train": train_idx, "all": np.arange(n)}[split]


def cmd_train(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = dataset_from_config(cfg.data, cfg.model.image_size, cfg.model.T)
    model = build_model(cfg.model)
    result = train(model, dataset, cfg.train, cfg)
    write_metrics(result.history, out / "metrics.csv")
    save_checkpoint(result.checkpoint, out / "model.ckpt")
    save_config(cfg, out / "config.json")
    last = result.history[-1]
    print(f"mode={cfg.model.mode} sao={cfg.model.uses_sao} alpha={cfg.model.alpha} seed={cfg.model.seed} "
          f"test_acc={last['test_acc']:.4f} train_acc={last['train_acc']:.4f} seconds={result.seconds:.1f}")
    return 0


def cmd_eval(args) -> int:
    cfg, model, dataset = restore(args.ckpt)
    idx = _test_indices(cfg, len(dataset), args.split)
    noise = None if args.snr is None else NoiseConfig(args.snr, args.noise_target, args.noise_seed)
    res = evaluate(model, dataset, idx, noise)
    print(json.dumps({"accuracy": res.accuracy, "n": res.n, "per_class": res.per_class,
                      "confusion": res.confusion.tolist()}, indent=2))
    return 0


def cmd_sweep(args) -> int:
    cfg, model, dataset = restore(args.ckpt)
    snrs = [float(s) for s in args.snrs.split(",")]
    idx = _test_indices(cfg, len(dataset), args.split)
    rows = snr_sweep(model, dataset, snrs, idx, args.noise_target, args.noise_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep(rows, out / "sweep.csv", out / "sweep.svg")
    for snr, acc in rows:
        print(f"snr={snr:g} accuracy={acc:.4f}")
    return 0


def probe_batch(model_cfg, size: int, seed: int) -> Batch:
    """Random float64 inputs of the configured shapes, one label per class in turn."""
    rng = np.random.default_rng(seed)
    hw = (model_cfg.image_size, model_cfg.image_size)
    return Batch(
        audio=rng.normal(size=(size, model_cfg.audio_channels, *hw)),
        visual=rng.random((size, model_cfg.visual_channels, *hw)),
        labels=np.arange(size) % model_cfg.num_classes,
    )


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config)
    with tf.default_dtype(np.float64):
        model = build_model(replace(cfg.model, relaxed=True))
    batch = probe_batch(cfg.model, args.batch, cfg.data.seed)
    with tf.default_dtype(np.float64):
        report = grad_check(model, batch)
    for name, err in report.errors:
        log.info("%s %.3e", name, err)
    print(f"params={model.num_parameters()} max_relative_error={report.max_relative_error:.3e} "
          f"{'PASS' if report.ok else 'FAIL'}")
    return 0 if report.ok else 1


def cmd_synth(args) -> int:
    ds = synth_dataset(args.classes, args.n, args.seed, args.image_size)
    save_dataset(ds, args.out, events=args.events, event_seed=args.seed)
    print(f"wrote {len(ds)} samples in {args.classes} classes to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikefuse", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--no-sao", action="store_true")
    t.add_argument("--alpha", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", default="runs/latest")
    t.set_defaults(func=cmd_train)

    for name, fn, helptext in (("eval", cmd_eval, "evaluate a checkpoint"),
                               ("sweep", cmd_sweep, "accuracy across noise levels")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--ckpt", required=True)
        e.add_argument("--noise-target", choices=("audio", "visual", "both"), default="both")
        e.add_argument("--noise-seed", type=int, default=0)
        e.add_argument("--split", choices=("test", "train", "all"), default="test")
        if name == "eval":
            e.add_argument("--snr", type=float)
        else:
            e.add_argument("--snrs", default="0,5,10,15,20,30")
            e.add_argument("--out", default="runs/sweep")
        e.set_defaults(func=fn)

    g = sub.add_parser("gradcheck", help="finite-difference check of a relaxed float64 build")
    g.add_argument("--config", required=True)
    g.add_argument("--batch", type=int, default=4)
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="write a synthetic dataset directory")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--n", type=int, default=24)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--image-size", type=int, default=32)
    s.add_argument("--events", action="store_true", help="also write .evt files")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    limits = _limit_threads()
    try:
        return args.func(args)
    finally:
        if limits is not None:
            limits.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())

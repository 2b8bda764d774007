"""Audio-visual spiking transformer with cross-modal residual fusion.

Per modality: SPS -> positional embedding -> ``depth`` encoder blocks.
Each block::

    z = x + SSA(x)
    z = z + alpha * CCSSA(z, z_other)     # scmrl mode only
    x = z + MLP(z)

Head: sum the modality streams, average over patches, linear classifier
per time step, average logits over time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as tf
from .attention import CCSSA, MLP, AttentionConfig, SpikingAttention, residual_fuse
from .config import ModelConfig
from .encoding import SPS, PositionalEmbedding, SpsConfig, direct_code
from .neuron import LifConfig
from .nn import Linear, Module
from .tensor import ShapeError, Tensor


class Stream(Module):
    def __init__(self, cfg: ModelConfig, modality: str, lif: LifConfig):
        super().__init__()
        channels = cfg.audio_channels if modality == "audio" else cfg.visual_channels
        sps_cfg = SpsConfig(channels, cfg.embed_dim, cfg.sps_stages)
        attn_cfg = AttentionConfig(cfg.embed_dim, cfg.attn_scale, cfg.heads)
        n = sps_cfg.num_patches(cfg.image_size, cfg.image_size)
        seed = cfg.seed
        self.sps = SPS(sps_cfg, lif, seed, f"{modality}.sps")
        self.pos = PositionalEmbedding(n, cfg.embed_dim, f"{modality}.pos")
        self.ssa = [SpikingAttention(attn_cfg, lif, seed, f"{modality}.block{b}.ssa") for b in range(cfg.depth)]
        self.mlp = [MLP(cfg.embed_dim, cfg.mlp_ratio, lif, seed, f"{modality}.block{b}.mlp") for b in range(cfg.depth)]
        if cfg.mode == "scmrl":
            # the temporal branch sums over T keys instead of N
            t_scale = cfg.temporal_attn_scale if cfg.temporal_attn_scale is not None else cfg.attn_scale * n / cfg.T
            t_cfg = replace(attn_cfg, scale=t_scale)
            self.ccssa = [CCSSA(attn_cfg, lif, seed, f"{modality}.block{b}.ccssa", t_cfg) for b in range(cfg.depth)]


class Model(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.lif = LifConfig(cfg.tau, cfg.v_th, 0.0, cfg.surrogate_slope, "relaxed" if cfg.relaxed else "spiking")
        self.streams = [Stream(cfg, m, self.lif) for m in cfg.modalities]
        self.head = Linear(cfg.embed_dim, cfg.num_classes, cfg.seed, "head")

    def forward(self, x_a: Tensor | None, x_v: Tensor | None):
        """Inputs are ``[T, B, C, H, W]``; returns ``(logits, res_a, res_v)``."""
        inputs = {"audio": x_a, "visual": x_v}
        xs = []
        for m, stream in zip(self.cfg.modalities, self.streams):
            x = inputs[m]
            if x is None:
                raise ValueError(f"mode {self.cfg.mode!r} needs {m} input")
            xs.append(stream.pos(stream.sps(x)))
        if len(xs) == 2 and xs[0].shape != xs[1].shape:
            raise ShapeError(f"modality features differ: {xs[0].shape} vs {xs[1].shape}")

        res: list[Tensor | None] = [None] * len(xs)
        for b in range(self.cfg.depth):
            zs = [x + s.ssa[b](x) for x, s in zip(xs, self.streams)]
            if self.cfg.mode == "scmrl":
                res = [self.streams[0].ccssa[b](zs[0], zs[1]), self.streams[1].ccssa[b](zs[1], zs[0])]
                zs = [residual_fuse(z, r, self.cfg.alpha) for z, r in zip(zs, res)]
            xs = [z + s.mlp[b](z) for z, s in zip(zs, self.streams)]

        fused = xs[0] if len(xs) == 1 else xs[0] + xs[1]
        pooled = tf.reduce_mean(fused, axis=2)
        logits = tf.reduce_mean(self.head(pooled), axis=0)
        if self.cfg.mode == "scmrl":
            return logits, res[0], res[1]
        return logits, None, None


def build_model(cfg: ModelConfig) -> Model:
    return Model(cfg)


@dataclass
class Batch:
    """Raw model inputs: static ``[B, C, H, W]`` or framed ``[B, T, C, H, W]``."""

    audio: np.ndarray | None
    visual: np.ndarray | None
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def encode_input(x: np.ndarray | None, T: int) -> Tensor | None:
    if x is None:
        return None
    arr = np.asarray(x, dtype=tf.get_default_dtype())
    if arr.ndim == 4:
        return direct_code(Tensor(arr), T)
    if arr.ndim == 5:
        if arr.shape[1] != T:
            raise ShapeError(f"framed input has {arr.shape[1]} steps, model expects T={T}")
        return Tensor(np.ascontiguousarray(arr.transpose(1, 0, 2, 3, 4)))
    raise ShapeError(f"expected [B,C,H,W] or [B,T,C,H,W] input, got {arr.shape}")


def forward(model: Model, batch: Batch):
    T = model.cfg.T
    x_a = encode_input(batch.audio, T) if "audio" in model.cfg.modalities else None
    x_v = encode_input(batch.visual, T) if "visual" in model.cfg.modalities else None
    for x in (x_a, x_v):
        if x is not None and x.shape[1] != len(batch):
            raise ShapeError(f"input batch {x.shape[1]} does not match {len(batch)} labels")
    return model(x_a, x_v)


def predict(model: Model, batch: Batch) -> np.ndarray:
    with tf.no_grad():
        logits, _, _ = forward(model, batch)
    return logits.data.argmax(axis=1)

"""Spiking self-attention and the cross-modal complementary spatiotemporal variant.

All activations are ``[T, B, N, D]``. The spatial branch attends over the
N patches of each (t, b) slice; the temporal branch attends over the T
steps of each (b, n) slice. Both branches squash their output along the
attended axis (mean) and broadcast it back before the element-wise product.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as tf
from .neuron import LIF, LifConfig
from .nn import BatchNorm, Linear, Module
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class AttentionConfig:
    embed_dim: int
    scale: float = 0.125
    heads: int = 1

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("attention scale must be positive")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 1.5
    depth: int = 2

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


def attention_product(q: Tensor, k: Tensor, v: Tensor, scale: float) -> Tensor:
    """``Q K^T V * s`` over the last two axes (no softmax)."""
    return tf.matmul(tf.matmul(q, k.permute(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)), v) * scale


class SpikingAttention(Module):
    """Q from ``x_q``, K and V from ``x_kv``; self-attention when they coincide.

    ``axis="temporal"`` attends over T instead of N. Q/K/V spikes are
    still produced by LIF dynamics along the true time axis.
    """

    def __init__(self, cfg: AttentionConfig, lif: LifConfig, seed: int, name: str, axis: str = "spatial"):
        super().__init__()
        if axis not in ("spatial", "temporal"):
            raise ValueError(f"unknown attention axis {axis!r}")
        d = cfg.embed_dim
        self.cfg = cfg
        self.axis = axis
        self.q = Linear(d, d, seed, name + ".q")
        self.k = Linear(d, d, seed, name + ".k")
        self.v = Linear(d, d, seed, name + ".v")
        self.q_bn = BatchNorm(d, name + ".q_bn")
        self.k_bn = BatchNorm(d, name + ".k_bn")
        self.v_bn = BatchNorm(d, name + ".v_bn")
        self.q_lif, self.k_lif, self.v_lif = LIF(lif), LIF(lif), LIF(lif)
        self.attn_lif = LIF(lif)
        self.proj = Linear(d, d, seed, name + ".proj")
        self.proj_bn = BatchNorm(d, name + ".proj_bn")
        self.proj_lif = LIF(lif)
        self.last_scores: Tensor | None = None

    def _heads(self, x: Tensor) -> Tensor:
        # [T,B,N,D] -> [T,B,h,N,dh] (spatial) or [B,N,h,T,dh] (temporal)
        T, B, N, D = x.shape
        h = self.cfg.heads
        x = x.reshape(T, B, N, h, D // h)
        if self.axis == "spatial":
            return x.permute(0, 1, 3, 2, 4)
        return x.permute(1, 2, 3, 0, 4)

    def _merge(self, x: Tensor, shape) -> Tensor:
        T, B, N, D = shape
        if self.axis == "spatial":
            return x.permute(0, 1, 3, 2, 4).reshape(T, B, N, D)
        return x.permute(3, 0, 1, 2, 4).reshape(T, B, N, D)

    def forward(self, x_q: Tensor, x_kv: Tensor | None = None) -> Tensor:
        x_kv = x_q if x_kv is None else x_kv
        if x_q.shape != x_kv.shape or x_q.ndim != 4:
            raise ShapeError(f"attention inputs must share a [T,B,N,D] shape: {x_q.shape} vs {x_kv.shape}")
        if x_q.shape[-1] != self.cfg.embed_dim:
            raise ShapeError(f"feature dim {x_q.shape[-1]} != embed_dim {self.cfg.embed_dim}")
        q = self.q_lif(self.q_bn(self.q(x_q)))
        k = self.k_lif(self.k_bn(self.k(x_kv)))
        v = self.v_lif(self.v_bn(self.v(x_kv)))
        scores = attention_product(self._heads(q), self._heads(k), self._heads(v), self.cfg.scale)
        scores = self._merge(scores, x_q.shape)
        self.last_scores = scores
        a = self.attn_lif(scores)
        return self.proj_lif(self.proj_bn(self.proj(a)))


def ssa(x: Tensor, attn: SpikingAttention) -> Tensor:
    return attn(x, x)


def cross_ssa(x_q: Tensor, x_kv: Tensor, attn: SpikingAttention) -> Tensor:
    return attn(x_q, x_kv)


def squash_expand(x: Tensor, axis: int) -> Tensor:
    """Mean over ``axis`` then replicate back to the original extent."""
    return tf.broadcast_expand(tf.reduce_mean(x, axis), axis, x.shape[axis])


def scsa(x_q: Tensor, x_kv: Tensor, attn: SpikingAttention) -> Tensor:
    if attn.axis != "spatial":
        raise ValueError("scsa needs a spatial attention block")
    return squash_expand(cross_ssa(x_q, x_kv, attn), axis=2)


def tcsa(x_q: Tensor, x_kv: Tensor, attn: SpikingAttention) -> Tensor:
    if attn.axis != "temporal":
        raise ValueError("tcsa needs a temporal attention block")
    return squash_expand(cross_ssa(x_q, x_kv, attn), axis=0)


def spatiotemporal_product(s: Tensor, t: Tensor) -> Tensor:
    if s.shape != t.shape:
        raise ShapeError(f"branch shapes differ: {s.shape} vs {t.shape}")
    return s * t


class CCSSA(Module):
    """Complementary features of ``x_self`` drawn from ``x_other``."""

    def __init__(self, cfg: AttentionConfig, lif: LifConfig, seed: int, name: str,
                 temporal_cfg: AttentionConfig | None = None):
        super().__init__()
        self.spatial = SpikingAttention(cfg, lif, seed, name + ".scsa", axis="spatial")
        self.temporal = SpikingAttention(temporal_cfg or cfg, lif, seed, name + ".tcsa", axis="temporal")

    def forward(self, x_self: Tensor, x_other: Tensor) -> Tensor:
        return spatiotemporal_product(scsa(x_self, x_other, self.spatial), tcsa(x_self, x_other, self.temporal))


def ccssa(x_self: Tensor, x_other: Tensor, block: CCSSA) -> Tensor:
    return block(x_self, x_other)


def residual_fuse(x: Tensor, res: Tensor, alpha: float) -> Tensor:
    if x.shape != res.shape:
        raise ShapeError(f"residual shape {res.shape} does not match features {x.shape}")
    return x + res * alpha


class MLP(Module):
    """Linear(D->rD) -> BN -> LIF -> Linear(rD->D) -> BN -> LIF."""

    def __init__(self, d: int, ratio: int, lif: LifConfig, seed: int, name: str):
        super().__init__()
        self.fc1 = Linear(d, d * ratio, seed, name + ".fc1")
        self.bn1 = BatchNorm(d * ratio, name + ".bn1")
        self.lif1 = LIF(lif)
        self.fc2 = Linear(d * ratio, d, seed, name + ".fc2")
        self.bn2 = BatchNorm(d, name + ".bn2")
        self.lif2 = LIF(lif)

    def forward(self, x: Tensor) -> Tensor:
        x = self.lif1(self.bn1(self.fc1(x)))
        return self.lif2(self.bn2(self.fc2(x)))

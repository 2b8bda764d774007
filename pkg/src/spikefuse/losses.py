"""Cross-entropy, semantic-alignment contrastive loss, and their sum."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as tf
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class SaoConfig:
    temperature: float = 0.1
    enabled: bool = True
    symmetric: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("SAO temperature must be positive")


@dataclass
class LossBreakdown:
    ce: Tensor
    sao: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {"ce": self.ce.item(), "sao": self.sao.item(), "total": self.total.item()}


def cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=int)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"expected {B} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    target = tf.one_hot(labels, C, dtype=logits.dtype)
    return -(tf.log_softmax(logits, axis=-1) * target).sum() * (1.0 / B)


def sao_features(res: Tensor) -> Tensor:
    """``[T,B,N,D]`` residual -> ``[T,B,D]`` patch-mean, unit length per (t, i)."""
    return tf.l2_normalize(tf.reduce_mean(res, axis=2), axis=-1)


def _info_nce(anchor: Tensor, other: Tensor, temperature: float) -> Tensor:
    # logits[t, i, j] = anchor[t, i] . other[t, j] / temperature
    logits = tf.matmul(anchor, other.permute(0, 2, 1)) * (1.0 / temperature)
    T, B, _ = logits.shape
    diag = np.broadcast_to(np.eye(B, dtype=logits.dtype), (T, B, B))
    return -(tf.log_softmax(logits, axis=-1) * diag).sum() * (1.0 / (T * B))


def sao_loss(fa: Tensor, fv: Tensor, cfg: SaoConfig = SaoConfig()) -> Tensor:
    """InfoNCE between audio and visual features at matching time steps.

    Negatives for sample ``i`` are the other samples' visual features at
    the same step.
    """
    if fa.shape != fv.shape or fa.ndim != 3:
        raise ShapeError(f"SAO features must share a [T,B,D] shape: {fa.shape} vs {fv.shape}")
    if fa.shape[1] < 2:
        warnings.warn("SAO with batch size < 2 has no negatives; loss is identically 0", stacklevel=2)
    loss = _info_nce(fa, fv, cfg.temperature)
    if cfg.symmetric:
        loss = (loss + _info_nce(fv, fa, cfg.temperature)) * 0.5
    return loss


def total_loss(logits: Tensor, labels, res_a: Tensor | None, res_v: Tensor | None, cfg: SaoConfig = SaoConfig()) -> LossBreakdown:
    ce = cross_entropy(logits, labels)
    if cfg.enabled and res_a is not None and res_v is not None:
        sao = sao_loss(sao_features(res_a), sao_features(res_v), cfg)
        total = ce + sao
    else:
        sao = Tensor(np.zeros((), dtype=logits.dtype))
        total = ce
    return LossBreakdown(ce=ce, sao=sao, total=total)

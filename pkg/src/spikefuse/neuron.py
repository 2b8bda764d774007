"""Leaky integrate-and-fire neurons.

Discrete recurrence with resting potential 0::

    h(t) = v(t-1) + (I(t) - v(t-1)) / tau
    s(t) = Θ(h(t) - v_th)
    v(t) = h(t) * (1 - s(t))

``relaxed`` mode swaps Θ for ``sigmoid(slope * (h - v_th))`` so the whole
forward pass becomes smooth and finite differences are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numba
import numpy as np

from . import tensor as tf
from .nn import Module
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class LifConfig:
    tau: float = 2.0
    v_th: float = 1.0
    v_reset: float = 0.0
    surrogate_slope: float = 4.0
    mode: str = "spiking"

    def __post_init__(self):
        if self.tau <= 1:
            raise ValueError(f"tau must exceed 1, got {self.tau}")
        if self.v_th <= self.v_reset:
            raise ValueError("v_th must exceed v_reset")
        if self.v_reset != 0.0:
            raise ValueError("only v_reset = 0 is supported")
        if self.mode not in ("spiking", "relaxed"):
            raise ValueError(f"unknown LIF mode {self.mode!r}")


@dataclass
class LifState:
    v: Tensor


def init_state(shape, dtype=None) -> LifState:
    return LifState(Tensor(np.zeros(shape, dtype=dtype or tf.get_default_dtype())))


def lif_step(state: LifState, current: Tensor, cfg: LifConfig) -> tuple[LifState, Tensor]:
    """One time step built from graph primitives."""
    if state.v.shape != current.shape:
        raise ShapeError(f"LIF state {state.v.shape} does not match input {current.shape}")
    h = state.v + (current - state.v) * (1.0 / cfg.tau)
    if cfg.mode == "relaxed":
        spikes = tf.sigmoid((h - cfg.v_th) * cfg.surrogate_slope)
    else:
        spikes = tf.heaviside_surrogate(h - cfg.v_th, cfg.surrogate_slope)
    v = h * (1.0 - spikes)
    return LifState(v), spikes


def lif_forward(inputs: Tensor, cfg: LifConfig) -> Tensor:
    """Run the recurrence over axis 0 of ``inputs`` starting from rest.

    Fused into a single graph node: the backward pass runs the recurrence
    in reverse (BPTT) instead of storing ``4 T`` intermediate nodes.
    """
    return _lif_fused(inputs, cfg)[0]


@numba.njit(cache=True)
def _lif_kernel(x, gain, v_th, slope, relaxed, h_out, s_out, v):
    steps, width = x.shape
    for t in range(steps):
        for m in range(width):
            h = v[m] + (x[t, m] - v[m]) * gain
            if relaxed:
                s = 1.0 / (1.0 + math.exp(-slope * (h - v_th)))
            else:
                s = 1.0 if h >= v_th else 0.0
            h_out[t, m] = h
            s_out[t, m] = s
            v[m] = h * (1.0 - s)


@numba.njit(cache=True)
def _lif_grad_kernel(g, h, s, ds, gain, decay, out):
    # dL/dh(t) = g(t) ds(t) + decay * dL/dh(t+1) * [(1 - s(t)) - h(t) ds(t)]
    steps, width = g.shape
    acc = np.zeros(width, dtype=g.dtype)
    for t in range(steps - 1, -1, -1):
        for m in range(width):
            d = ds[t, m]
            acc[m] = g[t, m] * d + decay * acc[m] * ((1.0 - s[t, m]) - h[t, m] * d)
            out[t, m] = gain * acc[m]


def _spike_slope(h: np.ndarray, s: np.ndarray, cfg: LifConfig) -> np.ndarray:
    if cfg.mode == "relaxed":
        return cfg.surrogate_slope * s * (1.0 - s)
    # sigmoid'(z) = e / (1 + e)^2 with e = exp(-|z|); symmetric and overflow-free
    e = np.exp(-np.abs(cfg.surrogate_slope * (h - cfg.v_th)))
    return cfg.surrogate_slope * e / ((1.0 + e) * (1.0 + e))


def _lif_fused(inputs: Tensor, cfg: LifConfig) -> tuple[Tensor, np.ndarray]:
    if inputs.ndim == 0 or inputs.shape[0] == 0:
        raise ShapeError("LIF needs a non-empty time axis")
    shape = inputs.shape
    x = np.ascontiguousarray(inputs.data).reshape(shape[0], -1)
    gain = x.dtype.type(1.0 / cfg.tau)
    h_all = np.empty_like(x)
    s_all = np.empty_like(x)
    v = np.zeros(x.shape[1], dtype=x.dtype)
    _lif_kernel(x, gain, x.dtype.type(cfg.v_th), x.dtype.type(cfg.surrogate_slope), cfg.mode == "relaxed", h_all, s_all, v)

    def backward(g):
        g2 = np.ascontiguousarray(g, dtype=x.dtype).reshape(x.shape)
        ds = _spike_slope(h_all, s_all, cfg).astype(x.dtype, copy=False)
        out = np.empty_like(x)
        # scalars in the array dtype keep the float32 loop from promoting
        _lif_grad_kernel(g2, h_all, s_all, ds, gain, x.dtype.type(1.0) - gain, out)
        return (out.reshape(shape),)

    return tf._make(s_all.reshape(shape), (inputs,), backward), v.reshape(shape[1:])


def lif_forward_stepwise(inputs: Tensor, cfg: LifConfig) -> Tensor:
    """Reference path: fold :func:`lif_step` over time."""
    if inputs.ndim == 0 or inputs.shape[0] == 0:
        raise ShapeError("LIF needs a non-empty time axis")
    state = init_state(inputs.shape[1:], inputs.dtype)
    out = []
    for t in range(inputs.shape[0]):
        state, s = lif_step(state, tf.index(inputs, t), cfg)
        out.append(s)
    return tf.stack(out, axis=0)


class LIF(Module):
    """Spiking layer over a ``[T, ...]`` input.

    ``v`` holds the membrane potential after the last step of the most
    recent forward, for inspection only; every forward starts from rest.
    """

    def __init__(self, cfg: LifConfig | None = None):
        super().__init__()
        self.cfg = cfg or LifConfig()
        self.v: np.ndarray | None = None

    def forward(self, x: Tensor) -> Tensor:
        out, self.v = _lif_fused(x, self.cfg)
        return out

    def reset_state(self) -> None:
        if self.v is not None:
            self.v = np.full_like(self.v, self.cfg.v_reset)


def reset_state(layer: Module) -> None:
    """Return every LIF layer under ``layer`` to the resting potential."""
    if isinstance(layer, LIF):
        layer.reset_state()
    for _, child in layer.children():
        reset_state(child)

"""Minimal module system: parameter registration, train/eval mode, layers."""

from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from . import tensor as tf
from .tensor import Tensor


def param_rng(seed: int, name: str) -> np.random.Generator:
    # keyed by name so initial values do not depend on construction order
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


class Module:
    def __init__(self) -> None:
        self.training = True

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad and value.is_leaf:
                yield prefix + key, value
        for key, child in self.children():
            yield from child.named_parameters(prefix + key + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key in getattr(self, "_buffers", ()):
            yield prefix + key, getattr(self, key)
        for key, child in self.children():
            yield from child.named_buffers(prefix + key + ".")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)
        for name, buf in buffers.items():
            buf[...] = state[name]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_param(seed: int, name: str, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    values = param_rng(seed, name).uniform(-bound, bound, size=shape)
    return Tensor(values.astype(tf.get_default_dtype()), requires_grad=True, name=name)


def zeros_param(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape, dtype=tf.get_default_dtype()), requires_grad=True, name=name)


class Linear(Module):
    """Affine map over the last axis; weight stored as ``[in, out]``."""

    def __init__(self, d_in: int, d_out: int, seed: int, name: str, bias: bool = True):
        super().__init__()
        self.weight = uniform_param(seed, name + ".weight", (d_in, d_out), d_in)
        self.bias = zeros_param((d_out,), name + ".bias") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return tf.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, seed: int, name: str, kernel: int = 3, stride: int = 1, padding: int = 1):
        super().__init__()
        self.weight = uniform_param(seed, name + ".weight", (c_out, c_in, kernel, kernel), c_in * kernel * kernel)
        self.bias = zeros_param((c_out,), name + ".bias")
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return tf.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    """Normalizes ``axis``; every other axis (time folded into batch) feeds the statistics."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, features: int, name: str, axis: int = -1, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        dtype = tf.get_default_dtype()
        self.gamma = Tensor(np.ones(features, dtype=dtype), requires_grad=True, name=name + ".gamma")
        self.beta = zeros_param((features,), name + ".beta")
        self.running_mean = np.zeros(features, dtype=dtype)
        self.running_var = np.ones(features, dtype=dtype)
        self.axis = axis
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return tf.batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.axis, self.training, self.momentum, self.eps,
        )

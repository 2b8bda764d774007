"""Central finite-difference check of analytic parameter gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nn import Module
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_relative_error: float
    errors: list[tuple[str, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.max_relative_error < 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    Central differences at h=1e-5 carry about ``1e-16 |L| / h`` of round-off,
    i.e. ~1e-10 for losses of order one. The floor keeps exactly-zero
    gradients (a bias feeding straight into BatchNorm) from turning that
    noise into a large ratio.
    """
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def default_loss(model, batch) -> Tensor:
    from .losses import total_loss
    from .model import forward
    from .training import sao_config

    logits, res_a, res_v = forward(model, batch)
    return total_loss(logits, batch.labels, res_a, res_v, sao_config(model.cfg)).total


def grad_check(model: Module, batch, loss_fn: Callable[[Module, object], Tensor] | None = None,
               h: float = 1e-5, floor: float = 1e-5) -> GradCheckReport:
    """Compare backward() against central differences for every parameter entry.

    The model must hold float64 parameters and be smooth (relaxed LIF mode).
    Buffers such as BN running statistics are restored after each probe.
    """
    loss_fn = loss_fn or default_loss
    params = list(model.named_parameters())
    if not params:
        return GradCheckReport(0.0, [])
    for name, p in params:
        if p.dtype != np.float64:
            raise ValueError(f"grad_check needs float64 parameters; {name} is {p.dtype}")
    if getattr(getattr(model, "cfg", None), "relaxed", True) is False:
        raise ValueError("grad_check needs a model built in relaxed mode")
    buffers = [(v, v.copy()) for _, v in model.named_buffers()]

    def restore():
        for live, saved in buffers:
            np.copyto(live, saved)

    model.zero_grad()
    loss = loss_fn(model, batch)
    loss.backward()
    restore()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params}

    errors = []
    for name, p in params:
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            with no_grad():
                flat[i] = old + h
                up = loss_fn(model, batch).item()
                restore()
                flat[i] = old - h
                down = loss_fn(model, batch).item()
                restore()
            flat[i] = old
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        errors.append((name, float(relative_error(analytic[name], numeric, floor).max())))
    model.zero_grad()
    return GradCheckReport(max(e for _, e in errors), errors)

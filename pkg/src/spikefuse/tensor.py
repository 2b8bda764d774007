"""Dense tensors with reverse-mode differentiation on top of numpy.

Every op records a closure that maps the output gradient to parent
gradients. ``Tensor.backward`` walks the graph in reverse topological
order; only leaf tensors with ``requires_grad`` keep their gradient, so
repeated backward calls accumulate on parameters and nowhere else.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numba
import numpy as np
from scipy.special import expit

_default_dtype = np.float32
_grad_enabled = True


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    _default_dtype = np.dtype(dtype).type


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype used for new tensors (float64 for gradient checks)."""
    global _default_dtype
    old = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = old


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


def is_grad_enabled() -> bool:
    return _grad_enabled


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype.kind == "f":
            arr = data
        else:
            arr = np.asarray(data, dtype=_default_dtype)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autograd ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_default_dtype))


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return _make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def heaviside_surrogate(v: Tensor, slope: float = 4.0) -> Tensor:
    """Spike function: Θ(v) forward with Θ(0) = 1, sigmoid-derivative backward.

    ``v`` is the already-shifted argument V - V_th.
    """
    out = (v.data >= 0).astype(v.data.dtype)

    def backward(g):
        sg = _sigmoid(slope * v.data)
        return (g * slope * sg * (1.0 - sg),)

    return _make(out, (v,), backward)


def surrogate_grad(v: np.ndarray, slope: float = 4.0) -> np.ndarray:
    sg = _sigmoid(slope * np.asarray(v, dtype=float))
    return slope * sg * (1.0 - sg)


# ---------------------------------------------------------------------------
# shape ops and reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for tensor of rank {ndim}")
    return axis % ndim


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = a.data.transpose(axes)
    return _make(out, (a,), lambda g: (g.transpose(np.argsort(axes)),))


def unsqueeze(a: Tensor, axis: int) -> Tensor:
    out = np.expand_dims(a.data, axis)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[_norm_axis(ax, a.ndim)] for ax in axes]))
    return sum_(a, axis, keepdims) * (1.0 / count)


def reduce_mean(x: Tensor, axis: int) -> Tensor:
    """Arithmetic mean over one axis, which is removed from the shape."""
    axis = _norm_axis(axis, x.ndim)
    extent = x.shape[axis]
    out = x.data.mean(axis=axis)

    def backward(g):
        g = np.expand_dims(g / extent, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), backward)


def broadcast_expand(x: Tensor, axis: int, extent: int) -> Tensor:
    """Insert ``axis`` and replicate ``x`` ``extent`` times along it."""
    if extent < 1:
        raise ShapeError(f"broadcast extent must be >= 1, got {extent}")
    axis = _norm_axis(axis, x.ndim + 1)
    expanded = np.expand_dims(x.data, axis)
    shape = list(expanded.shape)
    shape[axis] = extent
    out = np.broadcast_to(expanded, shape).copy()
    return _make(out, (x,), lambda g: (g.sum(axis=axis),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([unsqueeze(as_tensor(t), axis) for t in tensors], axis=axis)


def index(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(np.asarray(out), (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``[..., M, K] @ [..., K, P]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch axes not broadcastable: {a.shape} @ {b.shape}") from None
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; ``weight`` is ``[in, out]``."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(*lead, weight.shape[1])
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, backward)


# ---------------------------------------------------------------------------
# convolution, pooling, normalization
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[B,C,H,W]`` with ``weight[O,C,kh,kw]``."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, kernel {weight.shape}")
    B, C, H, W = x.shape
    O, _, kh, kw = weight.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    # windows: [B, C, Ho, Wo, kh, kw] -> cols [B*Ho*Wo, C*kh*kw]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = weight.data.reshape(O, -1).T
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(B, Ho, Wo, C, kh, kw)
            # accumulate channels-last, transpose once
            dxp = np.zeros((B, Hp, Wp, C), dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += dcols[..., i, j]
            gx = dxp[:, padding:padding + H, padding:padding + W, :] if padding else dxp
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, backward)


def maxpool2d(x: Tensor, k: int = 2, s: int | None = None) -> Tensor:
    """Window max over the last two axes; ties route gradient to the first
    occurrence in row-major window order."""
    s = k if s is None else s
    *lead, H, W = x.shape
    if k > H or k > W:
        raise ShapeError(f"maxpool window {k} exceeds input {H}x{W}")
    Ho = (H - k) // s + 1
    Wo = (W - k) // s + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(-2, -1))[..., ::s, ::s, :, :]
    flat = win.reshape(*lead, Ho, Wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = (np.arange(k * k) == arg[..., None]) * g[..., None]
        onehot = onehot.reshape(*lead, Ho, Wo, k, k)
        full = np.zeros_like(x.data)
        if s == k:
            blk = onehot.swapaxes(-3, -2).reshape(*lead, Ho * k, Wo * k)
            full[..., :Ho * k, :Wo * k] = blk
        else:
            for i in range(k):
                for j in range(k):
                    full[..., i:i + s * Ho:s, j:j + s * Wo:s] += onehot[..., i, j]
        return (full,)

    return _make(out, (x,), backward)


@numba.njit(cache=True)
def _bn_stats(x2):
    # two-pass mean / population variance per column, accumulated in float64
    m, c = x2.shape
    mu = np.zeros(c)
    var = np.zeros(c)
    for i in range(m):
        for j in range(c):
            mu[j] += x2[i, j]
    mu /= m
    for i in range(m):
        for j in range(c):
            d = x2[i, j] - mu[j]
            var[j] += d * d
    var /= m
    return mu, var


class DegenerateBatchError(ValueError):
    """Batch statistics requested from a single sample per feature."""


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    axis: int,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over every axis except ``axis``.

    Uses population variance for normalization; ``running_mean`` and
    ``running_var`` (unbiased) are updated in place in training mode.
    """
    axis = _norm_axis(axis, x.ndim)
    C = x.shape[axis]
    # work on a contiguous [M, C] view with the feature axis last
    last = axis == x.ndim - 1
    moved = x.data if last else np.moveaxis(x.data, axis, -1)
    moved_shape = moved.shape
    x2 = np.ascontiguousarray(moved).reshape(-1, C)
    count = x2.shape[0]
    if training:
        if count < 2:
            raise DegenerateBatchError(
                f"batchnorm in train mode needs more than one value per feature, got shape {x.shape}"
            )
        mu, var = _bn_stats(x2)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        mu, var = running_mean, running_var
    mu = mu.astype(x2.dtype, copy=False)
    inv = (1.0 / np.sqrt(var + eps)).astype(x2.dtype)
    xc = x2 - mu
    out2 = xc * (gamma.data * inv) + beta.data

    def restore(a2: np.ndarray) -> np.ndarray:
        a = a2.reshape(moved_shape)
        return a if last else np.moveaxis(a, -1, axis)

    def backward(g):
        g2 = np.ascontiguousarray(g if last else np.moveaxis(g, axis, -1)).reshape(-1, C)
        xhat = xc * inv
        gb = g2.sum(axis=0)
        gg = np.einsum("ij,ij->j", g2, xhat)
        gx = None
        if x.requires_grad:
            if training:
                gx2 = (gamma.data * inv) * (g2 - gb / count - xhat * (gg / count))
            else:
                gx2 = g2 * (gamma.data * inv)
            gx = restore(gx2)
        return gx, gg, gb

    return _make(restore(out2.astype(x.dtype, copy=False)), (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# fused numerics
# ---------------------------------------------------------------------------

def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Unit-normalize along ``axis``; all-zero vectors pass through unchanged."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    zero = norm == 0
    safe = np.where(zero, 1.0, norm)
    out = x.data / safe

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        gx = np.where(zero, g, (g - out * dot) / safe)
        return (gx,)

    return _make(out, (x,), backward)


def one_hot(labels: Sequence[int], classes: int, dtype=None) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, classes), dtype=dtype or _default_dtype)
    out[np.arange(labels.size), labels] = 1.0
    return out

"""Dense numpy arrays with a define-by-run reverse-mode tape.

Every differentiable operation returns a :class:`Tensor` that remembers its
inputs and a closure mapping the output cotangent to input cotangents.
:func:`backward` walks that graph once in reverse topological order.

Arrays carry an optional leading batch axis; the 1-D sequence ops
(``conv1d``, ``group_norm``, ``pool1d``, ``upsample_nearest``) accept either
``(C, L)`` or ``(B, C, L)`` input.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ConfigError, GraphError, ShapeError, TrainingError

_local = threading.local()


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    """Disable recording on the current thread."""
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None, op="leaf"):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self.op = op

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    dtype = property(lambda self: self.data.dtype)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    if dtype is None and arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return Tensor(arr)


def _node(data, parents, backward, op) -> Tensor:
    if not grad_enabled() or not any(p.requires_grad for p in parents):
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(a, b):
    a = as_tensor(a, dtype=b.dtype if isinstance(b, Tensor) else None)
    b = as_tensor(b, dtype=a.dtype)
    return a, b


# elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} and {b.shape}") from exc
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: cannot broadcast {a.shape} and {b.shape}") from exc
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} and {b.shape}") from exc
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * s, (a,), lambda g: (g * s,), "scale")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so no overflow warnings
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    out = a.data * s
    return _node(out, (a,), lambda g: (g * (s + out * (1.0 - s)),), "silu")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a) -> Tensor:
    """Exact GeLU, ``x * Phi(x)``."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def back(g):
        return (g * (cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)),)

    return _node(out.astype(x.dtype, copy=False), (a,), back, "gelu")


_ACTIVATIONS = {"silu": silu, "gelu": gelu, "relu": relu}


def activation(a, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind.lower()]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(a)


# reductions and shape plumbing ---------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(np.asarray(out), (a,), back, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _node(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    basic = not any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def back(g):
        z = np.zeros_like(a.data)
        if basic:
            z[idx] = g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return _node(np.array(out, copy=True) if not basic else out, (a,), back, "index")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(ts))
        )

    return _node(out, ts, back, "concat")


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), back, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    y = matmul(x, swapaxes(weight, 0, 1))
    return y if bias is None else add(y, bias)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), back, "softmax")


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits; targets are constants."""
    z = as_tensor(logits)
    y = np.asarray(targets, dtype=z.dtype)
    x = z.data
    loss = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    n = float(loss.size)
    return _node(np.asarray(loss.mean()), (z,), lambda g: (g * (_sigmoid(x) - y) / n,), "bce")


# sequence ops --------------------------------------------------------------

def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise ShapeError(f"expected (C, L) or (B, C, L), got {x.shape}")
    return x, False


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeeze else y


def _resolve_padding(padding, length: int, k: int, stride: int) -> tuple[int, int]:
    if padding == "same":
        out_len = -(-length // stride)
        total = max((out_len - 1) * stride + k - length, 0)
        return total // 2, total - total // 2
    if isinstance(padding, int):
        return padding, padding
    if isinstance(padding, (tuple, list)) and len(padding) == 2:
        return int(padding[0]), int(padding[1])
    raise ConfigError(f"bad padding spec {padding!r}")


def conv1d(x, weight, bias=None, stride: int = 1, padding="same") -> Tensor:
    """Cross-correlation over the last axis; weight is (C_out, C_in, k)."""
    x, squeeze = _batched(as_tensor(x))
    weight = as_tensor(weight)
    cout, cin, k = weight.shape
    if k < 1 or stride < 1:
        raise ConfigError(f"conv1d needs k>=1 and stride>=1, got k={k}, stride={stride}")
    B, c, L = x.shape
    if c != cin:
        raise ShapeError(f"conv1d: input has {c} channels, weight expects {cin}")
    pl, pr = _resolve_padding(padding, L, k, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr))) if pl or pr else x.data
    lout = (L + pl + pr - k) // stride + 1
    if lout < 1:
        raise ShapeError(f"conv1d: input length {L} too short for kernel {k}")
    win = sliding_window_view(xp, k, axis=2)[:, :, : stride * (lout - 1) + 1 : stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B, lout, cin * k)
    wmat = weight.data.reshape(cout, cin * k)
    out = np.matmul(cols, wmat.T).transpose(0, 2, 1)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def back(g):
        gt = g.transpose(0, 2, 1)
        grads = []
        if x.requires_grad:
            dcols = np.matmul(gt, wmat).reshape(B, lout, cin, k)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, :, j : j + stride * (lout - 1) + 1 : stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            grads.append(dxp[:, :, pl : pl + L])
        else:
            grads.append(None)
        if weight.requires_grad:
            dw = gt.reshape(-1, cout).T @ cols.reshape(-1, cin * k)
            grads.append(dw.reshape(cout, cin, k))
        else:
            grads.append(None)
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _unbatch(_node(out, parents, back, "conv1d"), squeeze)


def group_norm(x, groups: int, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, squeeze = _batched(as_tensor(x))
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    B, C, L = x.shape
    if groups < 1 or C % groups:
        raise ConfigError(f"group_norm: {C} channels not divisible into {groups} groups")
    if eps <= 0:
        raise ConfigError("group_norm: eps must be positive")
    xr = x.data.reshape(B, groups, -1)
    mu = xr.mean(axis=2, keepdims=True)
    xc = xr - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(B, C, L)
    out = xhat * gamma.data[:, None] + beta.data[:, None]
    n = xr.shape[2]

    def back(g):
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        dxh = (g * gamma.data[:, None]).reshape(B, groups, -1)
        xh = xhat.reshape(B, groups, -1)
        dx = inv / n * (n * dxh - dxh.sum(axis=2, keepdims=True) - xh * (dxh * xh).sum(axis=2, keepdims=True))
        return dx.reshape(B, C, L), dgamma, dbeta

    return _unbatch(_node(out, (x, gamma, beta), back, "group_norm"), squeeze)


def pool1d(x, kind: str, kernel: int = 3, stride: int = 1) -> Tensor:
    """Average or max pooling with replicate padding of ``kernel // 2`` per side."""
    x, squeeze = _batched(as_tensor(x))
    B, C, L = x.shape
    if kind not in ("avg", "max"):
        raise ConfigError(f"pool kind must be 'avg' or 'max', got {kind!r}")
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"pool kernel must be odd, got {kernel}")
    if kernel > 2 * L:
        raise ShapeError(f"pool kernel {kernel} exceeds twice the input length {L}")
    p = kernel // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p)), mode="edge")
    lout = (L + 2 * p - kernel) // stride + 1
    win = sliding_window_view(xp, kernel, axis=2)[:, :, : stride * (lout - 1) + 1 : stride]
    if kind == "avg":
        out = win.mean(axis=3)
        weights = None
    else:
        arg = win.argmax(axis=3)
        out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]

    def back(g):
        dxp = np.zeros_like(xp)
        for j in range(kernel):
            sl = slice(j, j + stride * (lout - 1) + 1, stride)
            dxp[:, :, sl] += g / kernel if kind == "avg" else g * (arg == j)
        dx = dxp[:, :, p : p + L].copy()
        if p:
            dx[:, :, 0] += dxp[:, :, :p].sum(axis=2)
            dx[:, :, -1] += dxp[:, :, p + L :].sum(axis=2)
        return (dx,)

    return _unbatch(_node(np.ascontiguousarray(out), (x,), back, f"{kind}pool"), squeeze)


def upsample_nearest(x, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    if factor < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {factor}")
    out = np.repeat(x.data, factor, axis=-1)
    return _node(out, (x,), lambda g: (g.reshape(x.shape + (factor,)).sum(axis=-1),), "upsample")


# differentiation -------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. ``params`` (or every named leaf).

    Parameters not reached by the graph get zero gradients.
    """
    if not isinstance(loss, Tensor) or not loss.requires_grad:
        raise GraphError("loss was not recorded on a tape; nothing to differentiate")
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if node._backward is None:
            leaves[id(node)] = node
            if g is not None:
                grads[id(node)] = g
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=parent.data.dtype, copy=True)
    if params is None:
        params = {t.name: t for t in leaves.values() if t.name is not None}
    return {
        name: grads.get(id(t), np.zeros_like(t.data)).reshape(t.shape)
        for name, t in params.items()
    }


# optimisation ---------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ConfigError(f"Adam betas must lie in [0, 1), got {beta1}, {beta2}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    step = state.step + 1
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    new_params, m_new, v_new = dict(params), {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            m_new[name] = state.m.get(name, np.zeros_like(p))
            v_new[name] = state.v.get(name, np.zeros_like(p))
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = beta1 * state.m.get(name, np.zeros_like(p)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(p)) + (1.0 - beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_params[name] = (p - update).astype(p.dtype, copy=False)
        m_new[name] = m.astype(p.dtype, copy=False)
        v_new[name] = v.astype(p.dtype, copy=False)
    return new_params, AdamState(m_new, v_new, step)


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm <= 0 or total <= max_norm:
        return dict(grads), total
    factor = max_norm / (total + 1e-12)
    return {k: g * np.asarray(factor, dtype=g.dtype) for k, g in grads.items()}, total


def numerical_grad(fn: Callable[[], float], arr: np.ndarray, h: float = 1e-5, indices: Iterable | None = None):
    """Central differences of ``fn`` w.r.t. entries of ``arr`` (mutated in place, then restored)."""
    flat = arr.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = {}
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out

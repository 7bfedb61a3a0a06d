"""Float64 tensors with a reverse-mode tape.

Every differentiable op records a node holding its parents and a closure that
maps the output gradient to parent gradients. ``backward`` orders the graph
reachable from a scalar loss topologically (the tape) and sweeps it once in
reverse, so each node is visited exactly once.

Leaves accumulate into ``.grad``; a :class:`Parameter` only does so while it
is trainable.
"""
from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError, UsageError

_GRAD_ENABLED = True

NORM_EPS = 1e-5


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording tape nodes."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "_requires_grad", "_parents", "_needs", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self._requires_grad = requires_grad
        self._parents = ()
        self._needs = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data, parents, backward, op):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.op = op
        needs = tuple(p.requires_grad for p in parents)
        if _GRAD_ENABLED and any(needs):
            out._requires_grad = True
            out._parents = tuple(parents)
            out._needs = needs
            out._backward = backward
        else:
            out._requires_grad = False
            out._parents = ()
            out._needs = ()
            out._backward = None
        return out

    @property
    def requires_grad(self) -> bool:
        return self._requires_grad

    @requires_grad.setter
    def requires_grad(self, value: bool) -> None:
        self._requires_grad = bool(value)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._result(self.data, (), None, "detach")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A named leaf owned by a network (or a latent table).

    ``group`` is one of the network group tags (``weight``, ``bias``,
    ``norm_scale``, ``norm_shift``, ``embedding``) or ``latent``.
    """

    __slots__ = ("name", "group", "trainable", "_suspended")

    def __init__(self, value, name: str, group: str, trainable: bool = True):
        super().__init__(value)
        self.name = name
        self.group = group
        self.trainable = trainable
        self._suspended = False
        self.grad = np.zeros_like(self.data)

    @property
    def requires_grad(self) -> bool:
        return self.trainable and not self._suspended

    @requires_grad.setter
    def requires_grad(self, value):
        raise AttributeError("set Parameter.trainable instead")

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = "" if self.trainable else ", frozen"
        return f"Parameter({self.name!r}, {self.group}, shape={self.shape}{flag})"


@contextlib.contextmanager
def suspended(params: Iterable[Parameter]):
    """Treat ``params`` as constants for graphs built inside the block.

    Gradients still flow *through* ops that use them, they just never
    accumulate into these parameters.
    """
    params = list(params)
    prev = [p._suspended for p in params]
    for p in params:
        p._suspended = True
    try:
        yield
    finally:
        for p, s in zip(params, prev):
            p._suspended = s


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor._result(a.data / b.data, (a, b), bw, "div")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)

    def bw(g):
        if p == 2.0:
            return (2.0 * g * a.data,)
        return (g * p * a.data ** (p - 1.0),)

    out = a.data * a.data if p == 2.0 else a.data**p
    return Tensor._result(out, (a,), bw, "pow")


def square(a) -> Tensor:
    return power(a, 2.0)


def tabs(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (g * np.sign(a.data),)

    return Tensor._result(np.abs(a.data), (a,), bw, "abs")


def leaky_relu(x, alpha: float = 0.2) -> Tensor:
    """max(x, alpha*x); x == 0 takes the alpha branch."""
    if not 0.0 <= alpha < 1.0:
        raise ConfigError(f"leaky_relu slope must lie in [0, 1), got {alpha}")
    x = as_tensor(x)
    pos = x.data > 0

    def bw(g):
        return (np.where(pos, g, alpha * g),)

    return Tensor._result(np.where(pos, x.data, alpha * x.data), (x,), bw, "leaky_relu")


def relu(x) -> Tensor:
    return leaky_relu(x, 0.0)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - y * y),)

    return Tensor._result(y, (x,), bw, "tanh")


def softplus(x) -> Tensor:
    """ln(1 + e^x) without overflow."""
    x = as_tensor(x)

    def bw(g):
        # sigmoid(x) = exp(-softplus(-x))
        return (g * np.exp(-np.logaddexp(0.0, -x.data)),)

    return Tensor._result(np.logaddexp(0.0, x.data), (x,), bw, "softplus")


# ---------------------------------------------------------------- reductions / shape


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape

    def bw(g):
        return (g.reshape(old),)

    return Tensor._result(a.data.reshape(shape), (a,), bw, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat"
    )


def take_rows(table, index) -> Tensor:
    """Rows ``table[index]``; gradients scatter-add back into the table."""
    table = as_tensor(table)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise UsageError(f"row index out of range for table of {table.shape[0]} rows")

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index, g)
        return (out,)

    return Tensor._result(table.data[index], (table,), bw, "take_rows")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """(m, k) @ (k, n); dA = dC Bᵀ, dB = Aᵀ dC."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._result(a.data @ b.data, (a, b), bw, "matmul")


def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _pad_nhwc(x_nchw: np.ndarray, p: int) -> np.ndarray:
    n, c, h, w = x_nchw.shape
    out = np.zeros((n, h + 2 * p, w + 2 * p, c))
    out[:, p : p + h, p : p + w, :] = x_nchw.transpose(0, 2, 3, 1)
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Rows are output pixels (n, ho, wo); columns are (kh, kw, c) taps of a padded NHWC input."""
    n, _, _, c = xp.shape
    sn, sh, sw, sc = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (n, ho, wo, kh, kw, c), (sn, sh * stride, sw * stride, sh, sw, sc), writeable=False
    )
    return view.reshape(n * ho * wo, kh * kw * c)


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip) of (N, C, H, W) or (C, H, W) input with (F, C, kh, kw) kernels."""
    x, w = as_tensor(x), as_tensor(w)
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects (N,C,H,W) and (F,C,kh,kw), got {x.shape} and {w.shape}")
    n, c, h, wd = xd.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernels {w.shape}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"invalid stride {stride} / padding {padding}")
    ho, wo = _conv_out(h, kh, stride, padding), _conv_out(wd, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ConfigError(
            f"conv2d output would be {ho}x{wo} for input {h}x{wd}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )
    p, s = padding, stride
    xp = _pad_nhwc(xd, p)
    cols = _im2col(xp, kh, kw, s, ho, wo)
    wmat = np.ascontiguousarray(w.data.transpose(0, 2, 3, 1)).reshape(f, kh * kw * c)
    out = (cols @ wmat.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def bw(g):
        g = g[None] if unbatched else g
        gw = gx = None
        if w.requires_grad:
            gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, f)
            gw = (gmat.T @ cols).reshape(f, kh, kw, c).transpose(0, 3, 1, 2)
        if x.requires_grad:
            if s == 1 and kh == kw and p <= kh - 1:
                # stride 1: input gradient is a correlation of the output
                # gradient with the spatially flipped, channel-swapped kernel
                q = kh - 1 - p
                gcols = _im2col(_pad_nhwc(g, q), kh, kw, 1, h, wd)
                wflip = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 2, 3, 0))
                gx = (gcols @ wflip.reshape(c, kh * kw * f).T).reshape(n, h, wd, c)
            else:
                gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, f)
                gcols = (gmat @ wmat).reshape(n, ho, wo, kh, kw, c)
                gxp = np.zeros(xp.shape)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i : i + s * ho : s, j : j + s * wo : s, :] += gcols[:, :, :, i, j, :]
                gx = gxp[:, p : p + h, p : p + wd, :]
            gx = gx.transpose(0, 3, 1, 2)
            if unbatched:
                gx = gx[0]
        return gx, gw

    return Tensor._result(out[0] if unbatched else out, (x, w), bw, "conv2d")


def upsample2x(x) -> Tensor:
    """Nearest-neighbour 2x upsampling over the last two axes."""
    x = as_tensor(x)

    def bw(g):
        s = g.shape
        return (g.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).sum(axis=(-3, -1)),)

    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)
    return Tensor._result(out, (x,), bw, "upsample2x")


def scale_shift_norm(x, gamma, beta, eps: float = NORM_EPS) -> Tensor:
    """Per-sample, per-channel standardisation followed by ``gamma * xhat + beta``.

    ``x`` is (N, C, H, W) or (C, H, W); statistics use the biased variance over
    the spatial axes, so results never depend on the batch.
    """
    if eps <= 0:
        raise ConfigError("normalization eps must be positive")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-3]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"norm parameters must have shape ({c},), got {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=(-2, -1), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(-2, -1), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gshape = (c, 1, 1)
    out = gamma.data.reshape(gshape) * xhat + beta.data.reshape(gshape)
    red = tuple(range(x.ndim - 3)) + (x.ndim - 2, x.ndim - 1)

    def bw(g):
        ggamma = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gbeta = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(gshape)
            m1 = dxhat.mean(axis=(-2, -1), keepdims=True)
            m2 = (dxhat * xhat).mean(axis=(-2, -1), keepdims=True)
            gx = inv * (dxhat - m1 - xhat * m2)
        return gx, ggamma, gbeta

    return Tensor._result(out, (x, gamma, beta), bw, "scale_shift_norm")


# ---------------------------------------------------------------- backward


def tape(loss: Tensor) -> list:
    """Nodes reachable from ``loss`` in topological order (inputs first)."""
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf that requires a gradient."""
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, need, pg in zip(node._parents, node._needs, node._backward(g)):
            if not need or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

"""Dense float tensors with reverse-mode differentiation.

A ``Tensor`` wraps a row-major numpy array (float32 by default, float64 is
kept when given explicitly so gradient checks can run at higher precision).
Every differentiable op records its parents and a closure mapping the output
gradient to input gradients; ``backward`` replays those closures in reverse
topological order.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_FLOAT_TYPES = (np.float32, np.float64)
_grad_enabled = True


class _FlopCounter:
    """Accumulates 2*MACs of conv/matmul ops while active."""

    def __init__(self):
        self.active = False
        self.flops = 0

    def add(self, macs):
        if self.active:
            self.flops += 2 * int(macs)


flop_counter = _FlopCounter()


@contextlib.contextmanager
def count_flops():
    flop_counter.active, flop_counter.flops = True, 0
    try:
        yield flop_counter
    finally:
        flop_counter.active = False


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


def _as_array(data, dtype=None):
    if isinstance(data, Tensor):
        data = data.data
    if dtype is not None:
        return np.ascontiguousarray(data, dtype=dtype)
    if isinstance(data, (np.ndarray, np.generic)) and data.dtype.type in _FLOAT_TYPES:
        return np.asarray(data)
    return np.asarray(data, dtype=np.float32)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.op = ""

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self):
        return Tensor(self.data)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        backward(self, grad)

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def _raise_item(shape):
    raise ContractError(f"item() needs a single-element tensor, got shape {shape}")


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _node(data, parents, backward_fn, op):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = op
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- graph traversal -------------------------------------------------------------

def topological_order(root: Tensor):
    """Nodes reachable from ``root`` with every input ahead of its consumer."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def backward(loss: Tensor, grad=None):
    if not loss.requires_grad:
        raise ContractError("backward() called on a tensor that does not require grad")
    if grad is None:
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- elementwise -----------------------------------------------------------------

def add(a, b):
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b):
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _node(out, (a, b), bw, "div")


def power(x: Tensor, exponent: float):
    xd = x.data
    return _node(xd ** exponent, (x,),
                 lambda g: (g * exponent * xd ** (exponent - 1),), "pow")


def exp(x: Tensor):
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor):
    xd = x.data
    return _node(np.log(xd), (x,), lambda g: (g / xd,), "log")


def tabs(x: Tensor):
    xd = x.data
    return _node(np.abs(xd), (x,), lambda g: (g * np.sign(xd),), "abs")


def relu(x: Tensor):
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor):
    out = _sigmoid_np(x.data)
    return _node(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def _sigmoid_np(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(x: Tensor):
    """log(1 + exp(x)), evaluated without overflow."""
    xd = x.data
    out = np.maximum(xd, 0) + np.log1p(np.exp(-np.abs(xd)))
    return _node(out, (x,), lambda g: (g * _sigmoid_np(xd),), "softplus")


_GELU_K = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor):
    """GELU, tanh approximation."""
    xd = x.data
    inner = _GELU_K * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        d = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * _GELU_K * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * d,)

    return _node(out, (x,), bw, "gelu")


# -- reductions and shape ops ----------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims=False):
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / float(n))


def reshape(x: Tensor, shape):
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes=None):
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _node(out, (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x: Tensor, index):
    shape, dtype = x.shape, x.dtype

    idx = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in idx)

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(np.ascontiguousarray(x.data[index]), (x,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis=0):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def pad(x: Tensor, pad_width):
    """Zero padding; ``pad_width`` follows ``np.pad``."""
    pad_width = tuple(tuple(p) for p in pad_width)
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, x.shape))
    return _node(np.pad(x.data, pad_width), (x,), lambda g: (g[index],), "pad")


def roll(x: Tensor, shifts, axes):
    neg = tuple(-s for s in np.atleast_1d(shifts))
    return _node(np.roll(x.data, shifts, axes), (x,), lambda g: (np.roll(g, neg, axes),), "roll")


# -- linear algebra --------------------------------------------------------------

def matmul(a: Tensor, b: Tensor):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)
    flop_counter.add(out.size * ad.shape[-1])

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _node(out, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None):
    """``x @ weight.T + bias`` with weight stored (out, in)."""
    if x.shape[-1] != weight.shape[-1]:
        raise DimensionError(f"linear shape mismatch: input {x.shape} vs weight {weight.shape}")
    lead = x.shape[:-1]
    xd = x.data.reshape(-1, x.shape[-1])
    wd = weight.data
    out = xd @ wd.T
    flop_counter.add(out.size * wd.shape[1])
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, wd.shape[0])
        gx = (g2 @ wd).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _node(out.reshape(*lead, wd.shape[0]), parents, bw, "linear")


def softmax(x: Tensor, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), bw, "softmax")


# -- normalization ---------------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps=1e-6):
    """Normalize over the last axis, then scale and shift."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data
    red = tuple(range(xd.ndim - 1))

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _node(out, (x, gamma, beta), bw, "layer_norm")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, axis=-1, momentum=0.1, eps=1e-5):
    """Batch normalization over every axis except ``axis``.

    In training mode the batch statistics are used and the running buffers are
    updated in place; in eval mode the running buffers are used.
    """
    xd = x.data
    axis = axis % xd.ndim
    red = tuple(i for i in range(xd.ndim) if i != axis)
    bshape = [1] * xd.ndim
    bshape[axis] = xd.shape[axis]
    gd = gamma.data.reshape(bshape)
    if training:
        n = xd.size // xd.shape[axis]
        mu = xd.mean(axis=red, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=red, keepdims=True)
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(-1).astype(running_mean.dtype)
        unbiased = var.reshape(-1) * (n / max(n - 1, 1))
        running_var *= 1 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        xc = xd - running_mean.reshape(bshape).astype(xd.dtype)
        var = running_var.reshape(bshape).astype(xd.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gd + beta.data.reshape(bshape)

    def bw(g):
        gh = g * gd
        if training:
            gx = inv * (gh - gh.mean(axis=red, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=red, keepdims=True))
        else:
            gx = gh * inv
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _node(out, (x, gamma, beta), bw, "batch_norm")


# -- convolution -----------------------------------------------------------------

def conv_output_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp, k, stride, ho, wo):
    # xp: (N, C, Hp, Wp) -> (N*ho*wo, C*k*k)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride]
    n, c = xp.shape[:2]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=1, pad=0):
    """2-D cross-correlation via im2col.

    ``x`` is (C, H, W) or (N, C, H, W); ``w`` is (C_out, C_in, k, k).
    """
    if x.ndim == 3:
        y = conv2d(reshape(x, (1,) + x.shape), w, b, stride, pad)
        return reshape(y, y.shape[1:])
    n, c, h, wd_ = x.shape
    co, ci, k, k2 = w.shape
    if ci != c or k != k2:
        raise DimensionError(f"conv2d weight {w.shape} does not match input {x.shape}")
    if h + 2 * pad < k or wd_ + 2 * pad < k:
        raise DimensionError(f"conv2d kernel {k} larger than padded input {(h + 2 * pad, wd_ + 2 * pad)}")
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(wd_, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    wmat = w.data.reshape(co, -1)
    if k == 1 and stride == 1:
        cols = None
        xt = xp.transpose(0, 2, 3, 1).reshape(-1, c)
        out = xt @ wmat.T
    else:
        cols = _im2col(xp, k, stride, ho, wo)
        out = cols @ wmat.T
    flop_counter.add(out.size * wmat.shape[1])
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2))
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gw = gx = None
        if w.requires_grad:
            src = cols if cols is not None else xp.transpose(0, 2, 3, 1).reshape(-1, c)
            gw = (g2.T @ src).reshape(w.shape)
        if x.requires_grad:
            gcols = g2 @ wmat
            if cols is None:
                gx = np.ascontiguousarray(gcols.reshape(n, ho, wo, c).transpose(0, 3, 1, 2))
            else:
                gcols = gcols.reshape(n, ho, wo, c, k, k)
                gxp = np.zeros(xp.shape, dtype=xp.dtype)
                for ky in range(k):
                    for kx in range(k):
                        gxp[:, :, ky: ky + stride * (ho - 1) + 1: stride,
                            kx: kx + stride * (wo - 1) + 1: stride] += gcols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
                gx = gxp[:, :, pad: pad + h, pad: pad + wd_] if pad else gxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _node(out, parents, bw, "conv2d")


def depthwise_conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None):
    """Same-padded depthwise convolution on a channels-last map.

    ``x`` is (N, H, W, C); ``w`` is (C, 1, k, k) with k odd.
    """
    n, h, wdt, c = x.shape
    k = w.shape[-1]
    if w.shape != (c, 1, k, k) or k % 2 == 0:
        raise DimensionError(f"depthwise weight {w.shape} does not match input {x.shape}")
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
    taps = w.data.reshape(c, k * k).T  # (k*k, C)
    out = np.zeros(x.shape, dtype=x.dtype)
    for t in range(k * k):
        ky, kx = divmod(t, k)
        out += xp[:, ky: ky + h, kx: kx + wdt, :] * taps[t]
    flop_counter.add(out.size * k * k)
    if b is not None:
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gxp = np.zeros(xp.shape, dtype=xp.dtype)
        gw = np.zeros((k * k, c), dtype=xp.dtype)
        for t in range(k * k):
            ky, kx = divmod(t, k)
            gxp[:, ky: ky + h, kx: kx + wdt, :] += g * taps[t]
            gw[t] = (g * xp[:, ky: ky + h, kx: kx + wdt, :]).sum(axis=(0, 1, 2))
        gx = gxp[:, p: p + h, p: p + wdt, :]
        gw = gw.T.reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))

    return _node(out, parents, bw, "depthwise_conv2d")


def conv_transpose2x2(x: Tensor, w: Tensor, b: Optional[Tensor] = None):
    """Stride-2, kernel-2 transposed convolution (N, C_in, H, W) -> (N, C_out, 2H, 2W).

    ``w`` is (C_in, C_out, 2, 2). Kernel equals stride, so output taps never
    overlap and the op reduces to a matmul plus pixel shuffle.
    """
    n, ci, h, wd_ = x.shape
    co = w.shape[1]
    if w.shape != (ci, co, 2, 2):
        raise DimensionError(f"transposed conv weight {w.shape} does not match input {x.shape}")
    xt = transpose(x, (0, 2, 3, 1))
    y = matmul(xt, reshape(w, (ci, co * 4)))  # (N, H, W, co*4)
    y = reshape(y, (n, h, wd_, co, 2, 2))
    y = transpose(y, (0, 3, 1, 4, 2, 5))
    y = reshape(y, (n, co, 2 * h, 2 * wd_))
    if b is not None:
        y = y + reshape(b, (1, co, 1, 1))
    return y


# -- resampling ------------------------------------------------------------------

def bilinear_matrix(n_out, n_in, dtype=np.float32):
    """Row-stochastic 1-D bilinear interpolation matrix, half-pixel centres."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        lo = min(int(math.floor(src)), n_in - 1)
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m.astype(dtype)


def resize_bilinear_np(arr: np.ndarray, out_hw) -> np.ndarray:
    """Bilinear resize over the last two axes of a numpy array."""
    h, w = arr.shape[-2:]
    ho, wo = out_hw
    if (h, w) == (ho, wo):
        return arr.copy()
    dtype = arr.dtype if arr.dtype.type in _FLOAT_TYPES else np.float64
    ry = bilinear_matrix(ho, h, dtype)
    rx = bilinear_matrix(wo, w, dtype)
    return ry @ arr.astype(dtype, copy=False) @ rx.T


def interpolate(x: Tensor, out_hw):
    """Bilinear resize over the last two axes (half-pixel centres)."""
    h, w = x.shape[-2:]
    ho, wo = out_hw
    if (h, w) == (ho, wo):
        return x
    ry = bilinear_matrix(ho, h, x.dtype)
    rx = bilinear_matrix(wo, w, x.dtype)
    out = ry @ x.data @ rx.T
    return _node(out, (x,), lambda g: (ry.T @ g @ rx,), "interpolate")


# -- windows ---------------------------------------------------------------------

def window_partition(x: Tensor, win: int):
    """(H, W, C) or (N, H, W, C) -> (num_windows[*N], win, win, C), row-major tiling."""
    batched = x.ndim == 4
    n, h, w, c = x.shape if batched else (1,) + x.shape
    if h % win or w % win:
        raise DimensionError(f"window size {win} does not divide feature map {(h, w)}")
    y = reshape(x, (n, h // win, win, w // win, win, c))
    y = transpose(y, (0, 1, 3, 2, 4, 5))
    return reshape(y, (n * (h // win) * (w // win), win, win, c))


def window_reverse(wins: Tensor, win: int, h: int, w: int, batch: Optional[int] = None):
    """Inverse of :func:`window_partition`; returns (H, W, C) unless ``batch`` is given."""
    if h % win or w % win:
        raise DimensionError(f"window size {win} does not divide feature map {(h, w)}")
    per = (h // win) * (w // win)
    n = 1 if batch is None else batch
    if wins.shape[0] != per * n or wins.shape[1:3] != (win, win):
        raise DimensionError(
            f"expected {per * n} windows of {win}x{win} for {(h, w)}, got {wins.shape}")
    c = wins.shape[-1]
    y = reshape(wins, (n, h // win, w // win, win, win, c))
    y = transpose(y, (0, 1, 3, 2, 4, 5))
    y = reshape(y, (n, h, w, c))
    return reshape(y, (h, w, c)) if batch is None else y

"""Differentiable operations.

Binary elementwise ops require identical shapes; the only implicit
broadcast is tensor-with-python-scalar.  Where a model genuinely needs a
broadcast (a bias row, a time-invariant embedding repeated over steps) it is
spelled out as its own op (``linear``, ``expand``) with its own backward.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import BoundsError, DimensionError, NumericError
from .tensor import Tensor, as_tensor, record

LN_EPS = 1e-5


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}")


# ---------------------------------------------------------------- arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return record("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return record("scale", (x,), x.data * c, lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return record("add_scalar", (x,), x.data + float(c), lambda g: (g,))


def neg(x: Tensor) -> Tensor:
    return record("neg", (x,), -x.data, lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``[m,k] @ [k,n]``; with leading dims they must match exactly (no broadcast)."""
    if (a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim or a.shape[-1] != b.shape[-2]
            or a.shape[:-2] != b.shape[:-2]):
        raise DimensionError(f"matmul: incompatible shapes {list(a.shape)} and {list(b.shape)}")
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return record("matmul", (a, b), ad @ bd, vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x[..., i] @ w[i, o] + b[o]``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {list(x.shape)} does not match weight {list(w.shape)}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias {list(b.shape)} does not match weight {list(w.shape)}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        dx = g @ wd.T
        dw = xd.reshape(-1, xd.shape[-1]).T @ g2
        if b is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return record("linear", inputs, out, vjp)


# --------------------------------------------------------------- activations

def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return record("relu", (x,), np.where(on, x.data, 0.0), lambda g: (g * on,))


# ---------------------------------------------------------------- structural

def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise DimensionError("concat: no inputs")
    nd = tensors[0].ndim
    ax = axis % nd
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise DimensionError(
                f"concat: shapes {[list(t.shape) for t in tensors]} differ outside axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return record("concat", tuple(tensors), out, lambda g: tuple(np.split(g, cuts, axis=ax)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("stack: no inputs")
    for t in tensors[1:]:
        _same_shape(tensors[0], t, "stack")
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return record("stack", tuple(tensors), out, vjp)


def slice_(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    n = x.shape[axis]
    if not (0 <= start < stop <= n):
        raise BoundsError(f"slice [{start}:{stop}] out of range for axis of size {n}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return record("slice", (x,), x.data[idx].copy(), vjp)


def take(x: Tensor, index) -> Tensor:
    """Gather rows along axis 0 (``x[index]``); repeated indices accumulate."""
    index = np.asarray(index, dtype=np.intp)
    n = x.shape[0]
    if index.size and (index.min() < -n or index.max() >= n):
        raise BoundsError(f"take: index out of range for axis of size {n}")
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return record("take", (x,), x.data[index], vjp)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {list(old)} as {list(shape)}") from exc
    return record("reshape", (x,), out, lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return record("transpose", (x,), np.ascontiguousarray(x.data.transpose(axes)),
                  lambda g: (g.transpose(inv),))


def expand(x: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis of length ``n`` by repetition; backward sums over it."""
    out = np.repeat(np.expand_dims(x.data, axis), n, axis=axis)
    return record("expand", (x,), out, lambda g: (g.sum(axis=axis),))


# ---------------------------------------------------------------- reductions

def reduce_sum(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    out = np.sum(x.data, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record("reduce_sum", (x,), np.asarray(out, dtype=np.float64), vjp)


def reduce_mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(reduce_sum(x, axis), 1.0 / n)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared difference as a scalar tensor."""
    target = as_tensor(target)
    _same_shape(pred, target, "mse")
    diff = pred.data - target.data
    n = diff.size
    k = 2.0 / n

    def vjp(g):
        d = g * k * diff
        return d, -d

    return record("mse", (pred, target), np.asarray(np.mean(diff * diff)), vjp)


# ------------------------------------------------------------- normalization

def softmax_lastdim(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, computed with max subtraction.

    ``mask`` (boolean, broadcastable to ``x``) marks the entries that take
    part; the rest behave as logits of minus infinity and get weight 0.
    """
    xd = x.data
    if mask is None:
        if not np.all(np.isfinite(xd)):
            raise NumericError("softmax: non-finite input")
        shifted = xd - xd.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not np.all(np.isfinite(xd[mask])):
            raise NumericError("softmax: non-finite input")
        if not np.all(mask.any(axis=-1)):
            raise NumericError("softmax: a row has every entry masked")
        masked = np.where(mask, xd, -np.inf)
        shifted = masked - masked.max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(shifted), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record("softmax", (x,), y, vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    n = x.shape[-1]
    if n < 2:
        raise DimensionError("layer_norm needs at least 2 features")
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(
            f"layer_norm: gamma {list(gamma.shape)} / beta {list(beta.shape)} vs features {n}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def vjp(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, n)
        return dx, (g2 * xhat.reshape(-1, n)).sum(axis=0), g2.sum(axis=0)

    return record("layer_norm", (x, gamma, beta), xhat * gd + beta.data, vjp)


# ------------------------------------------------------------------ imaging

def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``x`` is [N, C, H, W], ``w`` is [F, C, kh, kw]."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise DimensionError(
            f"conv2d: input {list(x.shape)}, kernel {list(w.shape)}, bias {list(b.shape)}")
    n, c, h, wd_ = x.shape
    f, _, kh, kw = w.shape
    p, s = padding, stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd_ + 2 * p - kw) // s + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{wd_}")
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(f, -1)
    out = (cols @ wmat.T + b.data).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    pshape = xp.shape

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
        dw = (g2.T @ cols).reshape(w.shape)
        dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros(pshape)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p:p + h, p:p + wd_] if p else dxp
        return dx, dw, g2.sum(axis=0)

    return record("conv2d", (x, w, b), np.ascontiguousarray(out), vjp)

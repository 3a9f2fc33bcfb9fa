"""Differentiable ops.  Each forward records a closure computing the
vector-Jacobian product for its inputs.

Broadcasting follows numpy (trailing-dimension alignment, 1-extents
stretch); gradients are summed back down to each operand's shape.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .. import _kernels
from .core import ShapeError, Tensor, record

__all__ = [
    "add", "sub", "mul", "div", "neg", "scale", "matmul", "concat", "stack",
    "tanh", "sigmoid", "relu", "exp", "log", "softmax", "log_softmax",
    "sum", "mean", "reshape", "transpose", "getitem", "take", "embedding_bag",
    "minimum", "layer_norm", "dropout", "square",
]


def _pair(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a, b
    if isinstance(a, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return Tensor(a), Tensor(b)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` over the axes that broadcasting stretched to reach it."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(op, fn, a, b):
    try:
        return fn(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = _binary("add", np.add, a, b)
    sa, sb = a.shape, b.shape
    return record("add", out, (a, b),
                  lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = _binary("sub", np.subtract, a, b)
    sa, sb = a.shape, b.shape
    return record("sub", out, (a, b),
                  lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = _binary("mul", np.multiply, a, b)
    A, B = a.data, b.data
    return record("mul", out, (a, b),
                  lambda g: (unbroadcast(g * B, A.shape), unbroadcast(g * A, B.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = _binary("div", np.divide, a, b)
    A, B = a.data, b.data
    return record("div", out, (a, b),
                  lambda g: (unbroadcast(g / B, A.shape),
                             unbroadcast(-g * A / (B * B), B.shape)))


def neg(a) -> Tensor:
    a = _t(a)
    return record("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = _t(a)
    return record("scale", a.data * c, (a,), lambda g: (g * c,))


def square(a) -> Tensor:
    a = _t(a)
    A = a.data
    return record("square", A * A, (a,), lambda g: (2.0 * g * A,))


def minimum(a, b) -> Tensor:
    """Elementwise min; at ties the gradient goes to ``a``."""
    a, b = _pair(a, b)
    out = _binary("minimum", np.minimum, a, b)
    pick_a = a.data <= b.data
    sa, sb = a.shape, b.shape
    return record("minimum", out, (a, b),
                  lambda g: (unbroadcast(np.where(pick_a, g, 0.0), sa),
                             unbroadcast(np.where(pick_a, 0.0, g), sb)))


# ---------------------------------------------------------------------------
# contraction


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    A, B = a.data, b.data
    try:
        out = np.matmul(A, B)
    except ValueError as exc:
        raise ShapeError(f"matmul: shapes {A.shape} and {B.shape} do not contract") from exc

    def bw(g):
        a2 = A[None, :] if A.ndim == 1 else A
        b2 = B[:, None] if B.ndim == 1 else B
        g2 = g
        if A.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if B.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        if A.ndim == 1:
            ga = ga.squeeze(-2)
        if B.ndim == 1:
            gb = gb.squeeze(-1)
        return unbroadcast(ga, A.shape), unbroadcast(gb, B.shape)

    return record("matmul", out, (a, b), bw)


# ---------------------------------------------------------------------------
# shape


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(_t(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in ts]
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from exc
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return record("concat", out, ts, lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(_t(t) for t in tensors)
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in ts]
        raise ShapeError(f"stack: incompatible shapes {shapes}") from exc
    n = len(ts)
    return record("stack", out, ts,
                  lambda g: tuple(np.squeeze(p, axis=axis)
                                  for p in np.split(g, n, axis=axis)))


def reshape(a, shape) -> Tensor:
    a = _t(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {src} to {shape}") from exc
    return record("reshape", out, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = _t(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return record("transpose", np.transpose(a.data, axes), (a,),
                  lambda g: (np.transpose(g, inv),))


def getitem(a, idx) -> Tensor:
    a = _t(a)
    out = a.data[idx]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=a.dtype)
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return record("getitem", out, (a,), bw)


def take(table, ids) -> Tensor:
    """Embedding lookup: rows of a 2-D ``table`` at integer ``ids`` (any shape)."""
    table = _t(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"take: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"take: ids out of range for table with {table.shape[0]} rows")
    out = table.data[ids]
    shape = table.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        _kernels.scatter_add_rows(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return record("take", out, (table,), bw)


def embedding_bag(table, flat_idx, offsets) -> Tensor:
    """Sum of ``table`` rows per segment ``flat_idx[offsets[s]:offsets[s+1]]``."""
    table = _t(table)
    flat_idx = np.asarray(flat_idx, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    out = _kernels.segment_sum(table.data, flat_idx, offsets)
    n_rows = table.shape[0]
    return record("embedding_bag", out, (table,),
                  lambda g: (_kernels.segment_scatter(g, flat_idx, offsets, n_rows),))


# ---------------------------------------------------------------------------
# nonlinearities


def _sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def tanh(a) -> Tensor:
    a = _t(a)
    y = np.tanh(a.data)
    return record("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = _t(a)
    y = _sigmoid_np(a.data)
    return record("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = _t(a)
    mask = a.data > 0
    return record("relu", np.where(mask, a.data, 0.0).astype(a.dtype), (a,),
                  lambda g: (np.where(mask, g, 0.0),))


def exp(a) -> Tensor:
    a = _t(a)
    with np.errstate(over="ignore"):   # overflow is reported as NumericError below
        y = np.exp(a.data)
    return record("exp", y, (a,), lambda g: (g * y,))


def log(a, floor: Optional[float] = None) -> Tensor:
    """Natural log; with ``floor`` the input is clamped from below first
    (zero gradient where the clamp is active)."""
    a = _t(a)
    x = a.data
    if floor is not None:
        active = x < floor
        xc = np.where(active, floor, x).astype(a.dtype)
    else:
        active = None
        xc = x
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xc)

    def bw(g):
        gx = g / xc
        if active is not None:
            gx = np.where(active, 0.0, gx)
        return (gx,)

    return record("log", y, (a,), bw)


def softmax(a, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Max-subtracted softmax; positions where ``mask`` is False get exactly 0."""
    a = _t(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ShapeError("softmax: a slice is fully masked")
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", y, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _t(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return record("log_softmax", y, (a,),
                  lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# ---------------------------------------------------------------------------
# reductions


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = _t(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", np.asarray(out, dtype=a.dtype), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# composite layers with fused gradients


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    X = x.data
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    try:
        out = xhat * gamma.data + beta.data
    except ValueError as exc:
        raise ShapeError(f"layer_norm: gamma {gamma.shape} does not match {x.shape}") from exc
    n = X.shape[-1]
    G = gamma.data

    def bw(g):
        gx_hat = g * G
        gx = inv / n * (n * gx_hat - gx_hat.sum(-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        ggamma = unbroadcast(g * xhat, G.shape)
        gbeta = unbroadcast(g, beta.shape)
        return gx, ggamma, gbeta

    return record("layer_norm", out, (x, gamma, beta), bw)


def dropout(x, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    x = _t(x)
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: training with rate > 0 needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep))

"""Parameter storage and small building blocks shared by the models."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, ops


class ParamStore:
    """Ordered, named collection of leaf tensors."""

    def __init__(self, rng: np.random.Generator, dtype=np.float64):
        self.rng = rng
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape, init: str = "xavier", scale: float = 1.0) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name}")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "normal":
            data = self.rng.normal(0.0, scale, size=shape)
        elif init == "uniform":
            data = self.rng.uniform(-scale, scale, size=shape)
        elif init == "xavier":
            fan_in = shape[-1] if len(shape) > 1 else shape[0]
            fan_out = shape[-2] if len(shape) > 1 else 1
            bound = scale * np.sqrt(6.0 / (fan_in + fan_out))
            data = self.rng.uniform(-bound, bound, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(np.ascontiguousarray(data, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self) -> list[str]:
        return list(self._params)

    def count(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, arr in state.items():
            p = self._params[k]
            if tuple(arr.shape) != p.shape:
                raise ValueError(f"parameter {k}: shape {arr.shape} != {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=self.dtype).copy()


def linear(x, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W.T + b`` with ``W`` stored as (out, in)."""
    y = ops.matmul(x, ops.transpose(W))
    return y if b is None else ops.add(y, b)


def lstm_step(x, h, c, Wx: Tensor, Wh: Tensor, b: Tensor):
    """Conventional LSTM step; gate rows ordered (i, f, g, o)."""
    z = ops.add(ops.add(linear(x, Wx), linear(h, Wh)), b)
    H = h.shape[-1]
    i = ops.sigmoid(z[..., 0:H])
    f = ops.sigmoid(z[..., H:2 * H])
    g = ops.tanh(z[..., 2 * H:3 * H])
    o = ops.sigmoid(z[..., 3 * H:4 * H])
    c_new = ops.add(ops.mul(f, c), ops.mul(i, g))
    h_new = ops.mul(o, ops.tanh(c_new))
    return h_new, c_new


def reverse_prefix_states(step, xs: Tensor, h0: Tensor, c0: Tensor):
    """Backward-direction states for every prefix of ``xs``.

    Row ``t`` of the result is the state of a right-to-left cell that has
    read ``xs[t], xs[t-1], ..., xs[0]``.  All prefixes run as one batch;
    rows that have consumed their prefix hold their state.
    """
    T = xs.shape[0]
    # step j feeds row t with xs[t - j] while j <= t
    idx = np.arange(T)[:, None] - np.arange(T)[None, :]          # (row t, step j)
    live = (idx >= 0)
    h = ops.add(ops.mul(Tensor(np.zeros((T, 1), dtype=h0.dtype)), h0), h0)
    c = ops.add(ops.mul(Tensor(np.zeros((T, 1), dtype=c0.dtype)), c0), c0)
    for j in range(T):
        rows = np.clip(idx[:, j], 0, None)
        x_j = ops.take(xs, rows) if xs.ndim == 2 else xs[rows]
        h_new, c_new = step(x_j, h, c)
        m = live[:, j:j + 1].astype(h0.dtype)
        if m.all():
            h, c = h_new, c_new
        else:
            keep = Tensor(m)
            hold = Tensor(1.0 - m)
            h = ops.add(ops.mul(keep, h_new), ops.mul(hold, h))
            c = ops.add(ops.mul(keep, c_new), ops.mul(hold, c))
    return h, c


def sinusoidal_positions(n: int, d: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    out = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return out.astype(dtype)

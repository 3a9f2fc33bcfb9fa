"""Tensor type, recording tape, and reverse-mode gradient accumulation."""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to an op's contraction/broadcast rule."""


class NumericError(FloatingPointError):
    """A forward op produced NaN or Inf."""


class Tensor:
    """Dense row-major array that can take part in a recorded computation.

    ``requires_grad`` marks leaves (parameters) and every tensor derived from
    them while a :class:`Tape` is active.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operator sugar; the implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


@dataclass
class Node:
    op: str
    inputs: tuple
    out: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of ops; parents always precede children.

    Use as a context manager to make it the active tape for the current
    execution context::

        with Tape() as tape:
            loss = f(params)
        grads = backward(tape, loss, params)
    """

    nodes: list = field(default_factory=list)
    _token: object = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)


_ACTIVE: contextvars.ContextVar[Optional[Tape]] = contextvars.ContextVar(
    "capsumt_active_tape", default=None)


def active_tape() -> Optional[Tape]:
    return _ACTIVE.get()


class no_record:
    """Suspend recording inside a tape context (e.g. for decoding)."""

    def __enter__(self):
        self._token = _ACTIVE.set(None)
        return self

    def __exit__(self, *exc):
        _ACTIVE.reset(self._token)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def record(op: str, out: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    """Wrap ``out`` and, when any input needs a gradient, append a tape node."""
    if not np.all(np.isfinite(out)):
        shapes = ", ".join(str(t.shape) for t in inputs)
        raise NumericError(f"{op}: non-finite output for inputs of shape {shapes}")
    tape = _ACTIVE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        t = Tensor(out, requires_grad=True)
        tape.nodes.append(Node(op, inputs, t, backward_fn))
        return t
    return Tensor(out)


def backward(tape: Tape, loss: Tensor,
             params: Optional[Iterable[Tensor]] = None) -> dict:
    """Reverse sweep over ``tape`` from the scalar ``loss``.

    Returns a map from leaf tensor to gradient array.  When ``params`` is
    given, exactly those leaves are returned, with zeros for any that the
    loss does not reach.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        parent_grads = node.backward(g)
        for inp, pg in zip(node.inputs, parent_grads):
            if pg is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
                leaves.setdefault(key, inp)
    if params is None:
        return {leaves[k]: g for k, g in grads.items() if k in leaves}
    return {p: grads.get(id(p), np.zeros_like(p.data)) for p in params}

"""Central finite-difference checks against tape gradients."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .core import NumericError, Tape, Tensor, backward, no_record


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def _scalar(t: Tensor) -> float:
    v = float(np.asarray(t.data, dtype=np.float64).reshape(-1)[0])
    if not np.isfinite(v):
        raise NumericError("grad_check: non-finite function value")
    return v


def grad_check(function: Callable[..., Tensor], inputs, eps: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - fd| / max(1, |analytic|)``.

    ``inputs`` is an array or a sequence of arrays; ``function`` receives one
    Tensor per array and must return a scalar Tensor.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"grad_check: eps={eps} outside [1e-7, 1e-3]")
    single = isinstance(inputs, (np.ndarray, float, int))
    arrays = [np.array(inputs, dtype=np.float64)] if single else \
        [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = function(*leaves)
    _scalar(out)
    grads = backward(tape, out, leaves)
    worst = 0.0
    with no_record():
        for leaf, arr in zip(leaves, arrays):
            numeric = np.zeros_like(arr)
            flat = arr.reshape(-1)
            nflat = numeric.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + eps
                fp = _scalar(function(*[Tensor(a) for a in arrays]))
                flat[i] = old - eps
                fm = _scalar(function(*[Tensor(a) for a in arrays]))
                flat[i] = old
                nflat[i] = (fp - fm) / (2 * eps)
            worst = max(worst, _rel_err(grads[leaf], numeric))
    return worst


def grad_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                      eps: float = 1e-5, max_coords: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None) -> float:
    """Like :func:`grad_check` but perturbs model parameters in place.

    ``loss_fn`` closes over ``params``.  With ``max_coords`` only that many
    coordinates per parameter are probed (sampled with ``rng``).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"grad_check: eps={eps} outside [1e-7, 1e-3]")
    with Tape() as tape:
        out = loss_fn()
    _scalar(out)
    grads = backward(tape, out, params)
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    with no_record():
        for p in params:
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            g = grads[p].reshape(-1)
            for i in coords:
                old = flat[i]
                flat[i] = old + eps
                fp = _scalar(loss_fn())
                flat[i] = old - eps
                fm = _scalar(loss_fn())
                flat[i] = old
                num = (fp - fm) / (2 * eps)
                worst = max(worst, abs(g[i] - num) / max(1.0, abs(g[i])))
    return worst

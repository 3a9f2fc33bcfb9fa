"""Mini-batch Adam loop shared by the three sequence models."""
from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence

import numpy as np

from .nn import ParamStore
from .tensor import AdamState, Tape, Tensor, adam_step, backward, ops

log = logging.getLogger(__name__)


def run_epochs(params: ParamStore, examples: Sequence, loss_fn: Callable[..., Tensor],
               epochs: int, batch: int, state: AdamState, rng: np.random.Generator,
               batches: Optional[Callable[[np.random.Generator], list]] = None,
               trainable: Optional[Callable[[list], Sequence[str]]] = None,
               on_epoch: Optional[Callable[[int, float], None]] = None) -> list[float]:
    """Train in place; returns the mean per-example loss of each epoch.

    ``loss_fn(example)`` builds one example's loss on the active tape.
    ``batches(rng)`` may replace the default shuffled split (used for
    style-alternating batches); ``trainable(batch)`` may restrict which
    parameters a batch updates.
    """
    history = []
    for epoch in range(epochs):
        if batches is not None:
            groups = batches(rng)
        else:
            order = rng.permutation(len(examples))
            groups = [[examples[i] for i in order[s:s + batch]]
                      for s in range(0, len(order), batch)]
        total, count = 0.0, 0
        for group in groups:
            names = list(trainable(group)) if trainable is not None else params.names()
            plist = [params[n] for n in names]
            with Tape() as tape:
                losses = [loss_fn(ex) for ex in group]
                loss = ops.scale(_sum(losses), 1.0 / len(losses))
            grads = backward(tape, loss, plist)
            adam_step(params, {n: grads[p] for n, p in zip(names, plist)}, state)
            total += loss.item() * len(group)
            count += len(group)
        history.append(total / max(count, 1))
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
        log.debug("epoch %d loss %.5f", epoch, history[-1])
    return history


def _sum(ts: Sequence[Tensor]) -> Tensor:
    out = ts[0]
    for t in ts[1:]:
        out = ops.add(out, t)
    return out

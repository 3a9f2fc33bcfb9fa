"""Finite-difference gradient checks of every training loss on tiny models."""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .ftawe import FtaweConfig, FtaWE, SubwordVocabulary
from .maa import MaaConfig, MaaFic
from .rng import make_rng
from .sfbialstm import StyleConfig, StyledCaptioner
from .tensor import grad_check, grad_check_params, ops
from .text import Vocabulary
from .unmhast import Summarizer, TransformerConfig

TOLERANCE = 1e-4
WORDS = "a dog cat runs on the grass and sleeps".split()


def _params_check(model, loss_fn: Callable, max_coords: int, seed: int) -> float:
    params = list(model.params.values())
    return grad_check_params(loss_fn, params, eps=1e-6, max_coords=max_coords,
                             rng=np.random.default_rng(seed))


def check_tensor_ops(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x, W, g = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=5)
    ids = np.array([0, 2, 2, 1])

    def f(x, W, g):
        h = ops.tanh(ops.matmul(x, ops.transpose(W)))
        h = ops.layer_norm(h, g, ops.scale(g, 0.5))
        s = ops.softmax(ops.mul(h, ops.sigmoid(h)), axis=-1)
        e = ops.take(ops.concat([x, ops.exp(ops.scale(x, 0.1))], axis=0), ids)
        lp = ops.log_softmax(ops.matmul(e, ops.transpose(W)), axis=-1)
        m = ops.minimum(s, ops.scale(ops.relu(h), 0.3))
        return ops.add(ops.sum(ops.mul(s, ops.log(ops.add(s, 1.0)))),
                       ops.add(ops.mean(lp), ops.sum(m)))

    return grad_check(f, [x, W, g], eps=1e-6)


def check_ftawe(seed: int = 0) -> float:
    cfg = FtaweConfig(dim=6, window=2, buckets=64, seed=seed, dtype="float64")
    sents = [WORDS[:5], WORDS[4:]]
    vocab = SubwordVocabulary.build(sents, cfg)
    model = FtaWE(vocab, cfg, make_rng(seed))
    centers = np.array([1, 2, 3])
    ctx = np.array([[0, 2, 3, 4], [1, 3, 0, 0], [2, 4, 5, 0]])
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0], [1, 1, 1, 0]], dtype=bool)
    return _params_check(model, lambda: model.batch_loss(centers, ctx, mask, None), 4, seed)


def check_maa(seed: int = 0) -> float:
    cfg = MaaConfig(feature_dim=5, hidden=4, embed=3, att_dim=3, seed=seed, dtype="float64")
    model = MaaFic(cfg, Vocabulary(WORDS), make_rng(seed))
    F = np.random.default_rng(seed).normal(size=(3, 5))
    return _params_check(model, lambda: model.sequence_loss(F, [4, 5, 6]), 3, seed)


def check_styled(seed: int = 0) -> float:
    cfg = StyleConfig(feature_dim=5, hidden=4, embed=3, rank=2, att_dim=3, seed=seed,
                      dtype="float64")
    model = StyledCaptioner(cfg, Vocabulary(WORDS), make_rng(seed))
    F = np.random.default_rng(seed).normal(size=(3, 5))
    return _params_check(model, lambda: model.sequence_loss(F, [4, 5, 6], "humorous"), 3, seed)


def check_summarizer(seed: int = 0) -> float:
    cfg = TransformerConfig(embed=6, d_model=8, heads=2, d_ff=8, att_dim=5, dropout=0.0,
                            coverage=True, seed=seed, dtype="float64")
    model = Summarizer(cfg, Vocabulary(WORDS[:6]), make_rng(seed))
    # coverage features start at zero; give them weight so their path is exercised
    r = np.random.default_rng(seed)
    for name in ("dec0.fuse.W_v", "ptr.w_c"):
        model.params[name].data[...] = r.normal(scale=0.3, size=model.params[name].shape)
    src = "a dog zorp runs on grass".split()
    tgt = "zorp dog runs".split()
    return _params_check(model, lambda: model.sequence_loss(src, tgt), 3, seed)


CHECKS = {
    "tensor-core": check_tensor_ops,
    "embed-ftawe": check_ftawe,
    "maa-fic": check_maa,
    "sf-bialstm": check_styled,
    "unmha-st": check_summarizer,
}


def run_suite(seed: int = 0) -> dict[str, tuple[float, float]]:
    """``{module: (max relative error, seconds)}``."""
    out = {}
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        err = fn(seed)
        out[name] = (err, time.perf_counter() - t0)
    return out

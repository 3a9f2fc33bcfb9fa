"""Factual captioning with modified adaptive attention.

Per decoding step the decoder

1. updates a forward LSTM on ``[embedding(previous token); mean region feature]``
   and a right-to-left LSTM over the prefix read so far,
2. attends over the region features: a channel distribution ``psi`` rescales
   feature channels, then a spatial distribution ``phi`` over the k
   channel-modulated regions yields the context ``a_t``,
3. mixes ``a_t`` with a visual sentinel drawn from the LSTM memory cell
   through the gate ``delta_t`` (0 = image, 1 = language),
4. scores the next token from the fused vector ``[a_hat_t; embedding]``
   together with both LSTM states.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .decoding import DecodeConfig, decode
from .features import FeatureSet
from .nn import ParamStore, linear, lstm_step, reverse_prefix_states
from .rng import make_rng
from .tensor import AdamState, Tensor, no_record, ops
from .text import END_ID, START_ID, Vocabulary
from .training import run_epochs


@dataclass
class MaaConfig:
    feature_dim: int = 2048
    hidden: int = 512
    embed: int = 300
    att_dim: int = 256
    lr: float = 2e-5
    batch: int = 64
    epochs: int = 70
    max_len: int = 20
    min_count: int = 1
    seed: int = 0
    dtype: str = "float32"

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "MaaConfig":
        d = dict(d or {})
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class AttendResult(NamedTuple):
    context: Tensor          # a_t
    channel: Tensor          # psi, over feature channels
    spatial: Tensor          # phi, over regions
    spatial_scores: Tensor   # pre-softmax region scores fed to the sentinel mix
    modulated: Tensor        # channel-rescaled region features


class BlendResult(NamedTuple):
    blended: Tensor          # a_hat_t
    delta: Tensor            # sentinel weight
    weights: Tensor          # softmax over [region scores; sentinel score]
    sentinel: Tensor         # s_t
    gate: Tensor             # m_t


def init_attention_params(p: ParamStore, width: int, att: int, prefix: str = "att") -> None:
    p.add(f"{prefix}.W_cF", (att,), "uniform", scale=0.5)
    p.add(f"{prefix}.b_c", (att,), "zeros")
    p.add(f"{prefix}.W_fc", (att, width))
    p.add(f"{prefix}.W_hc", (att,), "uniform", scale=0.5)
    p.add(f"{prefix}.W_sF", (att, width))
    p.add(f"{prefix}.b_s", (att,), "zeros")
    p.add(f"{prefix}.W_fs", (att, width))
    p.add(f"{prefix}.W_hs", (att,), "uniform", scale=0.5)


def init_blend_params(p: ParamStore, width: int, x_dim: int, att: int,
                      prefix: str = "blend") -> None:
    p.add(f"{prefix}.W_x", (width, x_dim))
    p.add(f"{prefix}.W_h", (width, width))
    p.add(f"{prefix}.W_s", (att, width))
    p.add(f"{prefix}.W_m", (att, width))
    p.add(f"{prefix}.w_h", (att,), "uniform", scale=0.5)


def maa_attend(F, h, p, prefix: str = "att") -> AttendResult:
    """Channel-then-spatial attention of hidden state(s) ``h`` over ``F``.

    ``F`` is (k, D); ``h`` is (D,) or a batch (T, D) of queries.  ``p`` maps
    ``"{prefix}.<name>"`` to parameter tensors.
    """
    F = F if isinstance(F, Tensor) else Tensor(F)
    h = h if isinstance(h, Tensor) else Tensor(h)
    if F.ndim != 2:
        raise ValueError(f"maa_attend: F must be (k, D), got {F.shape}")
    single = h.ndim == 1
    if single:
        h = ops.reshape(h, (1, -1))
    k, D = F.shape
    if h.shape[-1] != D or p[f"{prefix}.W_fc"].shape[1] != D:
        raise ValueError(f"maa_attend: width mismatch F {F.shape}, h {h.shape}, "
                         f"W_fc {p[f'{prefix}.W_fc'].shape}")
    T = h.shape[0]
    A = p[f"{prefix}.W_hc"].shape[0]
    # channel scores: one per feature channel from the region-averaged map
    f_bar = ops.mean(F, axis=0)                                              # (D,)
    outer = ops.matmul(ops.reshape(p[f"{prefix}.W_cF"], (A, 1)), ops.reshape(f_bar, (1, D)))
    base = ops.add(outer, ops.reshape(p[f"{prefix}.b_c"], (A, 1)))           # (A, D)
    hq = ops.reshape(linear(h, p[f"{prefix}.W_fc"]), (T, A, 1))
    zc = ops.tanh(ops.add(base, hq))                                         # (T, A, D)
    c_scores = ops.reshape(ops.matmul(ops.reshape(p[f"{prefix}.W_hc"], (1, A)), zc), (T, D))
    psi = ops.softmax(c_scores, axis=-1)
    # spatial scores over channel-modulated regions
    Fm = ops.mul(ops.reshape(F, (1, k, D)), ops.reshape(psi, (T, 1, D)))     # (T, k, D)
    zs = ops.add(ops.add(linear(Fm, p[f"{prefix}.W_sF"]), p[f"{prefix}.b_s"]),
                 ops.reshape(linear(h, p[f"{prefix}.W_fs"]), (T, 1, A)))
    s_scores = ops.matmul(ops.tanh(zs), p[f"{prefix}.W_hs"])                 # (T, k)
    phi = ops.softmax(s_scores, axis=-1)
    a = ops.reshape(ops.matmul(ops.reshape(phi, (T, 1, k)), Fm), (T, D))
    if single:
        return AttendResult(ops.reshape(a, (D,)), ops.reshape(psi, (D,)),
                            ops.reshape(phi, (k,)), ops.reshape(s_scores, (k,)),
                            ops.reshape(Fm, (k, D)))
    return AttendResult(a, psi, phi, s_scores, Fm)


def blend(a, s, delta) -> Tensor:
    """``delta * s + (1 - delta) * a``."""
    return ops.add(ops.mul(delta, s), ops.mul(ops.sub(1.0, delta), a))


def adaptive_blend(x, h_prev, memory, a, spatial_scores, h, p, prefix: str = "blend",
                   delta: Optional[float] = None) -> BlendResult:
    """Visual-sentinel mixing of the attended context ``a``.

    All vector arguments may carry a leading batch axis.  ``delta`` forces
    the sentinel weight (for probing the two endpoints).
    """
    x, h_prev, memory, a, h = (t if isinstance(t, Tensor) else Tensor(t)
                               for t in (x, h_prev, memory, a, h))
    spatial_scores = spatial_scores if isinstance(spatial_scores, Tensor) else Tensor(spatial_scores)
    if not (a.shape == memory.shape == h_prev.shape == h.shape):
        raise ValueError(f"adaptive_blend: shape mismatch a {a.shape}, memory {memory.shape}, "
                         f"h_prev {h_prev.shape}, h {h.shape}")
    m = ops.sigmoid(ops.add(linear(x, p[f"{prefix}.W_x"]), linear(h_prev, p[f"{prefix}.W_h"])))
    s = ops.mul(m, ops.tanh(memory))
    z = ops.matmul(ops.tanh(ops.add(linear(s, p[f"{prefix}.W_s"]), linear(h, p[f"{prefix}.W_m"]))),
                   p[f"{prefix}.w_h"])
    z = ops.reshape(z, z.shape + (1,))
    weights = ops.softmax(ops.concat([spatial_scores, z], axis=-1), axis=-1)
    d = weights[..., -1:]
    if delta is not None:
        d = Tensor(np.full(d.shape, delta, dtype=a.dtype))
    return BlendResult(blend(a, s, d), ops.reshape(d, d.shape[:-1]) if d.ndim > 1 else d,
                       weights, s, m)


class MaaFic:
    """Factual caption decoder."""

    kind = "maa-fic"

    def __init__(self, config: MaaConfig, vocab: Vocabulary,
                 rng: Optional[np.random.Generator] = None):
        self.config = config
        self.vocab = vocab
        rng = rng if rng is not None else make_rng(config.seed)
        p = self.params = ParamStore(rng, dtype=config.dtype)
        H, E, D, A, V = config.hidden, config.embed, config.feature_dim, config.att_dim, len(vocab)
        p.add("feat.W", (H, D))
        p.add("feat.b", (H,), "zeros")
        p.add("init.W_h", (H, H))
        p.add("init.b_h", (H,), "zeros")
        p.add("init.W_c", (H, H))
        p.add("init.b_c", (H,), "zeros")
        p.add("embed", (V, E), "normal", scale=0.1)
        for d in ("fwd", "bwd"):
            p.add(f"lstm_{d}.W_x", (4 * H, E + H))
            p.add(f"lstm_{d}.W_h", (4 * H, H))
            p.add(f"lstm_{d}.b", (4 * H,), "zeros")
        init_attention_params(p, H, A)
        init_blend_params(p, H, E + H, A)
        p.add("out.W_q", (H, H + E + 2 * H))
        p.add("out.b_q", (H,), "zeros")
        p.add("out.W", (V, H))
        p.add("out.b", (V,), "zeros")
        self.history: list[float] = []

    # -- forward -------------------------------------------------------------

    def _features(self, features) -> Tensor:
        F = features.features if isinstance(features, FeatureSet) else np.asarray(features)
        if F.ndim != 2 or F.shape[1] != self.config.feature_dim:
            raise ValueError(f"feature width {F.shape} does not match model "
                             f"feature_dim={self.config.feature_dim}")
        p = self.params
        return ops.tanh(linear(Tensor(F.astype(p.dtype)), p["feat.W"], p["feat.b"]))

    def logits(self, features, in_ids: Sequence[int], trace: Optional[list] = None) -> Tensor:
        """Next-token logits for every position of the input prefix (T, V)."""
        p = self.params
        Fh = self._features(features)                                   # (k, H)
        f_bar = ops.mean(Fh, axis=0)
        h0 = ops.tanh(linear(f_bar, p["init.W_h"], p["init.b_h"]))
        c0 = ops.tanh(linear(f_bar, p["init.W_c"], p["init.b_c"]))
        T = len(in_ids)
        emb = ops.take(p["embed"], np.asarray(in_ids))                  # (T, E)
        xs = ops.concat([emb, ops.add(ops.mul(Tensor(np.zeros((T, 1), p.dtype)), f_bar), f_bar)],
                        axis=-1)
        hs, cs, h_prevs = [], [], []
        h, c = h0, c0
        for t in range(T):
            h_prevs.append(h)
            h, c = lstm_step(xs[t], h, c, p["lstm_fwd.W_x"], p["lstm_fwd.W_h"], p["lstm_fwd.b"])
            hs.append(h)
            cs.append(c)
        Hf, Cf, Hp = ops.stack(hs), ops.stack(cs), ops.stack(h_prevs)
        Hb, _ = reverse_prefix_states(
            lambda x, hh, cc: lstm_step(x, hh, cc, p["lstm_bwd.W_x"], p["lstm_bwd.W_h"],
                                        p["lstm_bwd.b"]), xs, h0, c0)
        att = maa_attend(Fh, Hf, p)
        bl = adaptive_blend(xs, Hp, Cf, att.context, att.spatial_scores, Hf, p)
        if trace is not None:
            trace.append((att, bl))
        q = ops.concat([bl.blended, emb, Hf, Hb], axis=-1)
        z = ops.tanh(linear(q, p["out.W_q"], p["out.b_q"]))
        return linear(z, p["out.W"], p["out.b"])

    def sequence_loss(self, features, caption_ids: Sequence[int]) -> Tensor:
        """Teacher-forced cross-entropy summed over the caption (plus end token)."""
        ids = list(caption_ids)
        logp = ops.log_softmax(self.logits(features, [START_ID] + ids), axis=-1)
        tgt = np.asarray(ids + [END_ID])
        return ops.neg(ops.sum(logp[np.arange(len(tgt)), tgt]))

    def next_log_probs(self, features, prefix: Sequence[int]) -> np.ndarray:
        with no_record():
            lg = self.logits(features, [START_ID] + list(prefix))
            return ops.log_softmax(lg[-1], axis=-1).data.astype(np.float64)

    def token_probabilities(self, item) -> np.ndarray:
        features, ids = item
        with no_record():
            ids = list(ids)
            lp = ops.log_softmax(self.logits(features, [START_ID] + ids), axis=-1).data
        tgt = ids + [END_ID]
        return np.exp(lp[np.arange(len(tgt)), tgt])

    def generate_ids(self, features, config: Optional[DecodeConfig] = None) -> list[int]:
        config = config or DecodeConfig(max_len=self.config.max_len)
        return decode(lambda prefix: self.next_log_probs(features, prefix), END_ID, config)

    def generate(self, features, config: Optional[DecodeConfig] = None) -> list[str]:
        return self.vocab.decode(self.generate_ids(features, config))

    # -- persistence -----------------------------------------------------------

    def config_dict(self) -> dict:
        return {"config": asdict(self.config), "vocab": self.vocab.to_list()}

    @classmethod
    def from_config_dict(cls, d: dict) -> "MaaFic":
        return cls(MaaConfig.from_dict(d["config"]), Vocabulary.from_list(d["vocab"]))


def decode_caption(model: MaaFic, features, mode: str = "greedy", max_len: int = 20,
                   beam: int = 3) -> list[str]:
    if model is None:
        raise ValueError("decode_caption: no model")
    return model.generate(features, DecodeConfig(mode=mode, beam=beam, max_len=max_len))


def train_factual(pairs: Sequence[tuple], config: MaaConfig,
                  vocab: Optional[Vocabulary] = None,
                  rng: Optional[np.random.Generator] = None) -> MaaFic:
    """Fit on ``(features, caption_tokens)`` pairs with Adam."""
    if not pairs:
        raise ValueError("train_factual: no training pairs")
    rng = rng if rng is not None else make_rng(config.seed)
    vocab = vocab or Vocabulary.build([toks for _, toks in pairs], min_count=config.min_count)
    for i, (feats, _) in enumerate(pairs):
        F = feats.features if isinstance(feats, FeatureSet) else np.asarray(feats)
        if F.ndim != 2 or F.shape[1] != config.feature_dim:
            raise ValueError(f"pair {i}: feature width {F.shape} != feature_dim {config.feature_dim}")
    model = MaaFic(config, vocab, rng)
    examples = [(f, vocab.encode(toks)) for f, toks in pairs]
    state = AdamState(lr=config.lr)
    model.history = run_epochs(model.params, examples,
                               lambda ex: model.sequence_loss(ex[0], ex[1]),
                               config.epochs, config.batch, state, rng)
    model.adam = state
    return model

"""Pointer-generator transformer with unified attention and coverage.

Encoder and decoder layers combine scaled dot-product multi-head attention
with an additive ("unified") attention pass; the two contexts are fused by
a linear map, a residual connection and layer normalisation.  The decoder's
final layer also sees a coverage feature, the running sum of its earlier
pointer distributions.  Output probabilities mix a vocabulary softmax with
a copy distribution over source positions, indexed by a per-document
extended vocabulary so that source-only words can be emitted.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .decoding import DecodeConfig, decode
from .nn import ParamStore, linear, sinusoidal_positions
from .rng import child_rng, make_rng
from .tensor import AdamState, Tensor, no_record, ops
from .text import END_ID, START_ID, UNK_ID, Vocabulary
from .training import run_epochs

PROB_FLOOR = 1e-12


@dataclass
class TransformerConfig:
    vocab_size: int = 5000
    embed: int = 300
    d_model: int = 512
    heads: int = 8
    d_k: Optional[int] = None
    d_ff: int = 2048
    att_dim: int = 256
    enc_layers: int = 1
    dec_layers: int = 1
    dropout: float = 0.1
    coverage: bool = True
    coverage_weight: float = 1.0
    coverage_from_epoch: int = 0
    p_gen_clamp: Optional[float] = None
    max_src: int = 120
    max_tgt: int = 60
    lr: float = 2e-5
    batch: int = 4
    epochs: int = 100
    min_count: int = 1
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_k is None:
            self.d_k = self.d_model // self.heads
        if self.heads * self.d_k != self.d_model:
            raise ValueError(f"heads * d_k = {self.heads * self.d_k} != d_model = {self.d_model}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ValueError("need at least one encoder and one decoder layer")

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "TransformerConfig":
        d = dict(d or {})
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# ---------------------------------------------------------------------------
# extended vocabulary


class ExtendedVocab:
    """Base vocabulary plus temporary ids for one document's unknown words."""

    def __init__(self, base: Vocabulary, source: Sequence[str]):
        self.base = base
        self.oov: list[str] = []
        self._oov_index: dict[str, int] = {}
        for w in source:
            if w not in base and w not in self._oov_index:
                self._oov_index[w] = len(base) + len(self.oov)
                self.oov.append(w)
        self.source_ids = np.array([self.id(w) for w in source], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.base) + len(self.oov)

    def id(self, word: str) -> int:
        if word in self.base:
            return self.base.id(word)
        return self._oov_index.get(word, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(w) for w in tokens]

    def word(self, i: int) -> str:
        V = len(self.base)
        return self.base.decode([i])[0] if i < V else self.oov[i - V]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.word(i) for i in ids]

    def is_extended(self, i: int) -> bool:
        return i >= len(self.base)

    def to_base(self, ids: Sequence[int]) -> np.ndarray:
        """Map temporary ids to UNK so they can be embedded."""
        a = np.asarray(ids, dtype=np.int64)
        return np.where(a >= len(self.base), UNK_ID, a)


# ---------------------------------------------------------------------------
# attention blocks


def init_mha_params(p: ParamStore, prefix: str, d_model: int) -> None:
    for n in ("W_q", "W_k", "W_v", "W_o"):
        p.add(f"{prefix}.{n}", (d_model, d_model))


def _rows(x) -> tuple[Tensor, bool]:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    return (ops.reshape(x, (1, x.shape[0])), True) if x.ndim == 1 else (x, False)


def multi_head_attention(k, q, v, p, prefix: str, heads: int,
                         mask: Optional[np.ndarray] = None, causal: bool = False,
                         return_weights: bool = False):
    """Scaled dot-product attention in ``heads`` subspaces, concatenated
    and projected by the output matrix.  ``mask`` is (Tq, Tk), True = keep."""
    Wq = p[f"{prefix}.W_q"]
    d_model = Wq.shape[0]
    if heads < 1 or d_model % heads:
        raise ValueError(f"multi_head_attention: h * d_k != d_model ({heads} heads, width {d_model})")
    d_k = d_model // heads
    q, squeeze = _rows(q)
    k, _ = _rows(k)
    v, _ = _rows(v)
    Tq, Tk = q.shape[0], k.shape[0]
    if v.shape[0] != Tk:
        raise ValueError(f"multi_head_attention: {Tk} keys but {v.shape[0]} values")

    def split(x, T):
        return ops.transpose(ops.reshape(x, (T, heads, d_k)), (1, 0, 2))

    Q = split(linear(q, Wq), Tq)
    K = split(linear(k, p[f"{prefix}.W_k"]), Tk)
    Vv = split(linear(v, p[f"{prefix}.W_v"]), Tk)
    scores = ops.scale(ops.matmul(Q, ops.transpose(K, (0, 2, 1))), 1.0 / np.sqrt(d_k))
    keep = None if mask is None else np.asarray(mask, dtype=bool)
    if causal:
        tri = np.tril(np.ones((Tq, Tk), dtype=bool), k=Tk - Tq)
        keep = tri if keep is None else keep & tri
    w = ops.softmax(scores, axis=-1, mask=None if keep is None else keep[None])
    heads_out = ops.reshape(ops.transpose(ops.matmul(w, Vv), (1, 0, 2)), (Tq, d_model))
    out = linear(heads_out, p[f"{prefix}.W_o"])
    if squeeze:
        out = ops.reshape(out, (d_model,))
    return (out, w) if return_weights else out


def init_unified_params(p: ParamStore, prefix: str, d_model: int, att: int) -> None:
    p.add(f"{prefix}.W_q", (att, d_model))
    p.add(f"{prefix}.W_k", (att, d_model))
    p.add(f"{prefix}.v", (att,), "uniform", scale=0.5)


class UnifiedResult(NamedTuple):
    context: Tensor       # C
    weights: Tensor       # softmax of the energies
    energies: Tensor


def unified_attention(q, keys, values, p, prefix: str = "una") -> UnifiedResult:
    """Additive attention: ``e_i = v . tanh(W_q q + W_k k_i)``,
    weights = softmax(e), ``C = sum_i weights_i values_i``.

    ``q`` may be one query (d,) or a batch (T, d).
    """
    keys = keys if isinstance(keys, Tensor) else Tensor(np.asarray(keys))
    values = values if isinstance(values, Tensor) else Tensor(np.asarray(values))
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise ValueError("unified_attention: empty key set")
    if values.shape[0] != keys.shape[0]:
        raise ValueError(f"unified_attention: {keys.shape[0]} keys but {values.shape[0]} values")
    q, squeeze = _rows(q)
    T, L = q.shape[0], keys.shape[0]
    A = p[f"{prefix}.v"].shape[0]
    pre = ops.add(ops.reshape(linear(q, p[f"{prefix}.W_q"]), (T, 1, A)),
                  ops.reshape(linear(keys, p[f"{prefix}.W_k"]), (1, L, A)))
    e = ops.matmul(ops.tanh(pre), p[f"{prefix}.v"])             # (T, L)
    w = ops.softmax(e, axis=-1)
    C = ops.matmul(w, values)
    if squeeze:
        return UnifiedResult(ops.reshape(C, (values.shape[1],)), ops.reshape(w, (L,)),
                             ops.reshape(e, (L,)))
    return UnifiedResult(C, w, e)


def init_fuse_params(p: ParamStore, prefix: str, d_model: int, coverage: bool) -> None:
    p.add(f"{prefix}.W", (d_model, 2 * d_model))
    p.add(f"{prefix}.b", (d_model,), "zeros")
    if coverage:
        p.add(f"{prefix}.W_v", (d_model, d_model), "zeros")
    p.add(f"{prefix}.ln.g", (d_model,), "ones")
    p.add(f"{prefix}.ln.b", (d_model,), "zeros")


def fuse(mha_out, C, residual, p, prefix: str = "fuse", coverage_feature=None,
         drop=lambda t: t) -> Tensor:
    """``LN(residual + drop(W [mha_out; C] + b [+ W_v coverage_feature]))``."""
    width = p[f"{prefix}.b"].shape[0]
    for name, t in (("mha_out", mha_out), ("C", C), ("residual", residual)):
        if t.shape[-1] != width:
            raise ValueError(f"fuse: {name} width {t.shape[-1]} != {width}")
    z = linear(ops.concat([mha_out, C], axis=-1), p[f"{prefix}.W"], p[f"{prefix}.b"])
    if coverage_feature is not None:
        if f"{prefix}.W_v" not in p:
            raise ValueError("fuse: coverage feature given but layer has no coverage projection")
        z = ops.add(z, linear(coverage_feature, p[f"{prefix}.W_v"]))
    return ops.layer_norm(ops.add(residual, drop(z)), p[f"{prefix}.ln.g"], p[f"{prefix}.ln.b"])


def init_ffn_params(p: ParamStore, prefix: str, d_model: int, d_ff: int) -> None:
    p.add(f"{prefix}.W1", (d_ff, d_model))
    p.add(f"{prefix}.b1", (d_ff,), "zeros")
    p.add(f"{prefix}.W2", (d_model, d_ff))
    p.add(f"{prefix}.b2", (d_model,), "zeros")
    p.add(f"{prefix}.ln.g", (d_model,), "ones")
    p.add(f"{prefix}.ln.b", (d_model,), "zeros")


def ffn_sublayer(x, p, prefix: str, drop=lambda t: t) -> Tensor:
    h = linear(ops.relu(linear(x, p[f"{prefix}.W1"], p[f"{prefix}.b1"])),
               p[f"{prefix}.W2"], p[f"{prefix}.b2"])
    return ops.layer_norm(ops.add(x, drop(h)), p[f"{prefix}.ln.g"], p[f"{prefix}.ln.b"])


# ---------------------------------------------------------------------------
# coverage and pointer-generator output


def coverage_update(history: Sequence, length: int) -> np.ndarray:
    """Sum of the earlier pointer distributions; zeros before the first step."""
    chi = np.zeros(length)
    for b in history:
        chi = chi + np.asarray(b.data if isinstance(b, Tensor) else b)
    return chi


def coverage_loss(chi, b, weight: float = 1.0):
    """``weight * sum_i min(chi_i, b_i)``; a Tensor when either input is one."""
    if isinstance(chi, Tensor) or isinstance(b, Tensor):
        return ops.scale(ops.sum(ops.minimum(chi, b), axis=-1), weight)
    return weight * float(np.minimum(np.asarray(chi), np.asarray(b)).sum())


def init_pointer_params(p: ParamStore, d_model: int, att: int, coverage: bool) -> None:
    p.add("ptr.W_h", (att, d_model))
    p.add("ptr.W_s", (att, d_model))
    if coverage:
        p.add("ptr.w_c", (att,), "zeros")
    p.add("ptr.b", (att,), "zeros")
    p.add("ptr.v", (att,), "uniform", scale=0.5)


def pointer_attention(omega, H, p, chi=None, H_proj=None) -> Tensor:
    """Distribution over source positions for decoder state(s) ``omega``.

    ``omega`` is (d,) or (T, d); ``chi`` matches its leading shape with a
    trailing source axis.  ``H_proj`` caches ``H @ W_h^T``.
    """
    H_proj = linear(H, p["ptr.W_h"]) if H_proj is None else H_proj      # (L, A)
    s = linear(omega, p["ptr.W_s"])
    if omega.ndim == 1:
        pre = ops.add(ops.add(H_proj, s), p["ptr.b"])
        if chi is not None:
            pre = ops.add(pre, ops.mul(ops.reshape(chi, (chi.shape[0], 1)), p["ptr.w_c"]))
        return ops.softmax(ops.matmul(ops.tanh(pre), p["ptr.v"]), axis=-1)
    T, A = s.shape
    L = H_proj.shape[0]
    pre = ops.add(ops.add(ops.reshape(H_proj, (1, L, A)), ops.reshape(s, (T, 1, A))), p["ptr.b"])
    if chi is not None:
        pre = ops.add(pre, ops.mul(ops.reshape(chi, (T, L, 1)), p["ptr.w_c"]))
    return ops.softmax(ops.matmul(ops.tanh(pre), p["ptr.v"]), axis=-1)


def init_pgn_params(p: ParamStore, d_model: int, embed: int, vocab: int) -> None:
    p.add("pgn.tau", (d_model, 2 * d_model))
    p.add("pgn.u", (d_model,), "zeros")
    p.add("pgn.tau2", (vocab, d_model))
    p.add("pgn.u2", (vocab,), "zeros")
    p.add("pgn.w_h", (d_model,), "uniform", scale=0.1)
    p.add("pgn.w_n", (d_model,), "uniform", scale=0.1)
    p.add("pgn.w_x", (embed,), "uniform", scale=0.1)
    p.add("pgn.r", (1,), "zeros")


def vocab_distribution(omega, n, p) -> Tensor:
    """``softmax(tau2 (tau [omega; n] + u) + u2)`` over the base vocabulary."""
    inner = linear(ops.concat([omega, n], axis=-1), p["pgn.tau"], p["pgn.u"])
    return ops.softmax(linear(inner, p["pgn.tau2"], p["pgn.u2"]), axis=-1)


def generation_switch(omega, n, x, p, clamp: Optional[float] = None) -> Tensor:
    """``sigmoid(w_h . omega + w_n . n + w_x . x + r)``, or a constant when clamped."""
    if clamp is not None:
        lead = omega.shape[:-1]
        return Tensor(np.full(lead + (1,), float(clamp), dtype=omega.dtype))
    z = ops.add(ops.add(ops.matmul(omega, p["pgn.w_h"]), ops.matmul(n, p["pgn.w_n"])),
                ops.matmul(x, p["pgn.w_x"]))
    z = ops.add(ops.reshape(z, z.shape + (1,)), p["pgn.r"])
    return ops.sigmoid(z)


def final_distribution(p_vocab, p_gen, b, source_ext_ids, extended_size: int) -> Tensor:
    """``p_gen * P_vocab (zero-padded) + (1 - p_gen) * copy(b)``.

    ``p_vocab`` (..., V), ``p_gen`` (..., 1), ``b`` (..., L) over source
    positions whose extended ids are ``source_ext_ids``.
    """
    p_vocab = p_vocab if isinstance(p_vocab, Tensor) else Tensor(np.asarray(p_vocab, float))
    p_gen = p_gen if isinstance(p_gen, Tensor) else Tensor(np.asarray(p_gen, float))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, float))
    src = np.asarray(source_ext_ids, dtype=np.int64)
    if src.size == 0:
        raise ValueError("final_distribution: empty source")
    V = p_vocab.shape[-1]
    if extended_size < V or src.max() >= extended_size:
        raise ValueError("final_distribution: extended vocabulary too small")
    if p_gen.ndim == p_vocab.ndim - 1:
        p_gen = ops.reshape(p_gen, p_gen.shape + (1,))
    onehot = np.zeros((src.size, extended_size), dtype=b.dtype)
    onehot[np.arange(src.size), src] = 1.0
    copy = ops.matmul(b, Tensor(onehot))
    gen = p_vocab
    if extended_size > V:
        pad = Tensor(np.zeros(p_vocab.shape[:-1] + (extended_size - V,), dtype=p_vocab.dtype))
        gen = ops.concat([p_vocab, pad], axis=-1)
    return ops.add(ops.mul(p_gen, gen), ops.mul(ops.sub(1.0, p_gen), copy))


class PgnStep(NamedTuple):
    attention: Tensor     # b^t over source positions
    context: Tensor       # n_t
    p_vocab: Tensor
    p_gen: Tensor
    p_final: Tensor


def pgn_step(omega, H, x, ext: ExtendedVocab, p, chi=None,
             clamp: Optional[float] = None) -> PgnStep:
    """One output step of the pointer-generator head."""
    H = H if isinstance(H, Tensor) else Tensor(np.asarray(H))
    if H.ndim != 2 or H.shape[0] == 0:
        raise ValueError("pgn_step: empty source")
    b = pointer_attention(omega, H, p, chi)
    n = ops.matmul(b, H)
    pv = vocab_distribution(omega, n, p)
    pg = generation_switch(omega, n, x, p, clamp)
    return PgnStep(b, n, pv, pg, final_distribution(pv, pg, b, ext.source_ids, len(ext)))


# ---------------------------------------------------------------------------
# the model


class ForwardTrace(NamedTuple):
    p_final: Tensor          # (T, M)
    attention: Tensor        # (T, L) pointer distributions b^t
    coverage: list           # chi_t arrays, one per step
    coverage_losses: list    # per-step coverage loss values
    p_gen: Tensor            # (T, 1)
    p_vocab: Tensor          # (T, V)
    unified_weights: list    # weight tensors of every unified-attention call


class SequenceLoss(NamedTuple):
    nll: Tensor
    coverage: Tensor
    total: Tensor


class Summarizer:
    """Encoder-decoder summariser with copy and coverage."""

    kind = "unmha-st"

    def __init__(self, config: TransformerConfig, vocab: Vocabulary,
                 rng: Optional[np.random.Generator] = None):
        self.config = config
        self.vocab = vocab
        rng = rng if rng is not None else make_rng(config.seed)
        self.dropout_rng = child_rng(config.seed, 1)
        self.training = False
        self.coverage_loss_on = config.coverage and config.coverage_from_epoch <= 0
        c = config
        p = self.params = ParamStore(rng, dtype=c.dtype)
        d, V = c.d_model, len(vocab)
        p.add("embed", (V, c.embed), "normal", scale=0.1)
        p.add("in.W", (d, c.embed))
        p.add("in.b", (d,), "zeros")
        for l in range(c.enc_layers):
            init_mha_params(p, f"enc{l}.mha", d)
            init_unified_params(p, f"enc{l}.una", d, c.att_dim)
            init_fuse_params(p, f"enc{l}.fuse", d, coverage=False)
            init_ffn_params(p, f"enc{l}.ffn", d, c.d_ff)
        for l in range(c.dec_layers):
            last = l == c.dec_layers - 1
            init_mha_params(p, f"dec{l}.self", d)
            p.add(f"dec{l}.self.ln.g", (d,), "ones")
            p.add(f"dec{l}.self.ln.b", (d,), "zeros")
            init_mha_params(p, f"dec{l}.mha", d)
            init_unified_params(p, f"dec{l}.una", d, c.att_dim)
            init_fuse_params(p, f"dec{l}.fuse", d, coverage=c.coverage and last)
            init_ffn_params(p, f"dec{l}.ffn", d, c.d_ff)
        init_pointer_params(p, d, c.att_dim, c.coverage)
        init_pgn_params(p, d, c.embed, V)
        self.history: list[float] = []

    # -- helpers ---------------------------------------------------------------

    def _drop(self, t: Tensor) -> Tensor:
        return ops.dropout(t, self.config.dropout, self.dropout_rng, self.training)

    def _inputs(self, ids: np.ndarray) -> tuple[Tensor, Tensor]:
        p = self.params
        emb = ops.take(p["embed"], ids)
        x = linear(emb, p["in.W"], p["in.b"])
        pos = Tensor(sinusoidal_positions(len(ids), self.config.d_model, p.dtype))
        return emb, self._drop(ops.add(x, pos))

    def encode(self, ext: ExtendedVocab, trace: Optional[list] = None) -> Tensor:
        c, p = self.config, self.params
        L = ext.source_ids.size
        if L == 0:
            raise ValueError("empty document")
        if L > c.max_src:
            raise ValueError(f"source length {L} exceeds max_src {c.max_src}")
        _, x = self._inputs(ext.to_base(ext.source_ids))
        for l in range(c.enc_layers):
            mha = multi_head_attention(x, x, x, p, f"enc{l}.mha", c.heads)
            una = unified_attention(x, x, x, p, f"enc{l}.una")
            if trace is not None:
                trace.append(una.weights)
            x = fuse(mha, una.context, x, p, f"enc{l}.fuse", drop=self._drop)
            x = ffn_sublayer(x, p, f"enc{l}.ffn", self._drop)
        return x

    def forward(self, ext: ExtendedVocab, dec_in: Sequence[int], H: Optional[Tensor] = None,
                clamp: Optional[float] = None) -> ForwardTrace:
        """Teacher-forced pass; ``dec_in`` are extended ids starting with START."""
        c, p = self.config, self.params
        una_w: list = []
        H = self.encode(ext, una_w) if H is None else H
        L = H.shape[0]
        T = len(dec_in)
        emb, y = self._inputs(ext.to_base(dec_in))
        for l in range(c.dec_layers):
            last = l == c.dec_layers - 1
            s = multi_head_attention(y, y, y, p, f"dec{l}.self", c.heads, causal=True)
            y = ops.layer_norm(ops.add(y, self._drop(s)), p[f"dec{l}.self.ln.g"],
                               p[f"dec{l}.self.ln.b"])
            mha = multi_head_attention(H, y, H, p, f"dec{l}.mha", c.heads)
            una = unified_attention(y, H, H, p, f"dec{l}.una")
            una_w.append(una.weights)
            if not (last and c.coverage):
                y = fuse(mha, una.context, y, p, f"dec{l}.fuse", drop=self._drop)
                y = ffn_sublayer(y, p, f"dec{l}.ffn", self._drop)
        H_proj = linear(H, p["ptr.W_h"])
        chis: list = []
        closs: list = []
        if c.coverage:
            pre = linear(ops.concat([mha, una.context], axis=-1), p[f"dec{l}.fuse.W"],
                         p[f"dec{l}.fuse.b"])
            chi = Tensor(np.zeros(L, dtype=H.dtype))
            omegas, bs = [], []
            for t in range(T):
                z = ops.add(pre[t], linear(ops.matmul(chi, H), p[f"dec{l}.fuse.W_v"]))
                om = ops.layer_norm(ops.add(y[t], self._drop(z)), p[f"dec{l}.fuse.ln.g"],
                                    p[f"dec{l}.fuse.ln.b"])
                om = ffn_sublayer(om, p, f"dec{l}.ffn", self._drop)
                b = pointer_attention(om, H, p, chi, H_proj)
                chis.append(chi.data.copy())
                closs.append(coverage_loss(chi, b, c.coverage_weight))
                chi = ops.add(chi, b)
                omegas.append(om)
                bs.append(b)
            omega, B = ops.stack(omegas), ops.stack(bs)
        else:
            omega = y
            B = pointer_attention(omega, H, p, None, H_proj)
        n = ops.matmul(B, H)
        pv = vocab_distribution(omega, n, p)
        clamp = c.p_gen_clamp if clamp is None else clamp
        pg = generation_switch(omega, n, emb, p, clamp)
        P = final_distribution(pv, pg, B, ext.source_ids, len(ext))
        return ForwardTrace(P, B, chis, closs, pg, pv, una_w)

    # -- training --------------------------------------------------------------

    def loss_parts(self, source: Sequence[str], target: Sequence[str]) -> SequenceLoss:
        c = self.config
        if len(target) + 1 > c.max_tgt:
            raise ValueError(f"target length {len(target)} exceeds max_tgt {c.max_tgt}")
        ext = ExtendedVocab(self.vocab, source)
        tgt = ext.encode(target) + [END_ID]
        tr = self.forward(ext, [START_ID] + tgt[:-1])
        return sequence_loss(tr.p_final, tgt, tr.coverage_losses if self.coverage_loss_on else None)

    def sequence_loss(self, source: Sequence[str], target: Sequence[str]) -> Tensor:
        return self.loss_parts(source, target).total

    # -- inference -------------------------------------------------------------

    def next_distribution(self, ext: ExtendedVocab, H: Tensor, prefix: Sequence[int],
                          clamp: Optional[float] = None) -> np.ndarray:
        with no_record():
            tr = self.forward(ext, [START_ID] + list(prefix), H, clamp)
        return tr.p_final.data[-1].astype(np.float64)

    def summarize_ids(self, source: Sequence[str], config: Optional[DecodeConfig] = None,
                      clamp: Optional[float] = None) -> tuple[list[int], ExtendedVocab]:
        if len(source) == 0:
            raise ValueError("empty document")
        config = config or DecodeConfig(max_len=self.config.max_tgt)
        ext = ExtendedVocab(self.vocab, source)
        was, self.training = self.training, False
        try:
            with no_record():
                H = self.encode(ext)

            def next_log_probs(prefix):
                return np.log(np.maximum(self.next_distribution(ext, H, prefix, clamp), PROB_FLOOR))

            ids = decode(next_log_probs, END_ID, config)
        finally:
            self.training = was
        return ids, ext

    def summarize(self, source: Sequence[str], config: Optional[DecodeConfig] = None,
                  clamp: Optional[float] = None) -> list[str]:
        ids, ext = self.summarize_ids(source, config, clamp)
        return ext.decode(ids)

    def token_probabilities(self, item) -> np.ndarray:
        source, target = item
        ext = ExtendedVocab(self.vocab, source)
        tgt = ext.encode(target) + [END_ID]
        with no_record():
            P = self.forward(ext, [START_ID] + tgt[:-1]).p_final.data
        return P[np.arange(len(tgt)), tgt]

    def init_embeddings(self, vectors) -> int:
        """Copy pretrained rows for every vocabulary word found in ``vectors``."""
        table = self.params["embed"]
        if vectors.dim != table.shape[1]:
            raise ValueError(f"vector width {vectors.dim} != embed {table.shape[1]}")
        hits = 0
        for w in self.vocab.to_list():
            if w in vectors:
                table.data[self.vocab.id(w)] = vectors[w]
                hits += 1
        return hits

    def config_dict(self) -> dict:
        return {"config": asdict(self.config), "vocab": self.vocab.to_list()}

    @classmethod
    def from_config_dict(cls, d: dict) -> "Summarizer":
        return cls(TransformerConfig.from_dict(d["config"]), Vocabulary.from_list(d["vocab"]))


def sequence_loss(p_final: Tensor, targets: Sequence[int],
                  coverage_losses: Optional[Sequence] = None) -> SequenceLoss:
    """Mean floored NLL of ``targets`` plus the mean per-step coverage loss."""
    T = len(targets)
    picked = p_final[np.arange(T), np.asarray(targets)]
    nll = ops.neg(ops.mean(ops.log(picked, floor=PROB_FLOOR)))
    if coverage_losses:
        cov = ops.scale(_sum(coverage_losses), 1.0 / len(coverage_losses))
    else:
        cov = Tensor(np.zeros((), dtype=p_final.dtype))
    return SequenceLoss(nll, cov, ops.add(nll, cov))


def _sum(ts):
    out = ts[0]
    for t in ts[1:]:
        out = ops.add(out, t)
    return out


def build_summary_vocab(pairs: Sequence[tuple], config: TransformerConfig) -> Vocabulary:
    return Vocabulary.build([s for s, _ in pairs] + [t for _, t in pairs],
                            min_count=config.min_count, max_size=config.vocab_size)


def train_summarizer(pairs: Sequence[tuple], config: TransformerConfig,
                     vocab: Optional[Vocabulary] = None,
                     rng: Optional[np.random.Generator] = None,
                     vectors=None) -> Summarizer:
    """Teacher-forced training on ``(source_tokens, target_tokens)`` pairs.

    With ``coverage_from_epoch = k`` the coverage term joins the loss from
    epoch ``k`` on; before that only the likelihood term is optimised.
    """
    if not pairs:
        raise ValueError("train_summarizer: empty corpus")
    rng = rng if rng is not None else make_rng(config.seed)
    vocab = vocab or build_summary_vocab(pairs, config)
    model = Summarizer(config, vocab, rng)
    if vectors is not None:
        model.init_embeddings(vectors)
    state = AdamState(lr=config.lr)

    def on_epoch(epoch: int, _loss: float) -> None:
        model.coverage_loss_on = config.coverage and epoch + 1 >= config.coverage_from_epoch

    model.training = True
    try:
        model.history = run_epochs(model.params, list(pairs),
                                   lambda ex: model.sequence_loss(ex[0], ex[1]),
                                   config.epochs, config.batch, state, rng, on_epoch=on_epoch)
    finally:
        model.training = False
    model.adam = state
    return model

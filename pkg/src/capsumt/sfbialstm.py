"""Style-factored bidirectional attention LSTM for stylised captions.

Every input-to-gate matrix is factored as ``Q @ S @ L`` where ``Q`` (m, r)
and ``L`` (r, n) are shared by all styles and the square ``S`` (r, r) is
owned by one style.  A refining input gate rescales the input before the
usual LSTM gates see it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .decoding import DecodeConfig, decode
from .features import FeatureSet
from .nn import ParamStore, linear, reverse_prefix_states
from .rng import make_rng
from .tensor import AdamState, Tensor, no_record, ops
from .text import END_ID, START_ID, Vocabulary
from .training import run_epochs

GATES = ("x", "i", "f", "o", "g")
STYLES = ("romantic", "humorous")
DIRECTIONS = ("fwd", "bwd")


def compose_gate_matrix(Q, S, L) -> Tensor:
    """``Q @ S @ L``: (m, r) x (r, r) x (r, n) -> (m, n)."""
    Q, S, L = (t if isinstance(t, Tensor) else Tensor(t) for t in (Q, S, L))
    if Q.ndim != 2 or S.ndim != 2 or L.ndim != 2:
        raise ValueError("compose_gate_matrix: factors must be matrices")
    m, r = Q.shape
    if S.shape != (r, r) or L.shape[0] != r:
        raise ValueError(f"compose_gate_matrix: rank mismatch Q {Q.shape}, S {S.shape}, L {L.shape}")
    if r > min(m, L.shape[1]):
        raise ValueError(f"compose_gate_matrix: rank {r} exceeds min{(m, L.shape[1])}")
    return ops.matmul(ops.matmul(Q, S), L)


def style_matrix_init(rng: np.random.Generator, r: int) -> np.ndarray:
    """Symmetric non-negative start for a style factor: ``|A A^T| / r``."""
    A = rng.normal(size=(r, r))
    return np.abs(A @ A.T) / r


@dataclass
class StyleConfig:
    feature_dim: int = 2048
    embed: int = 300
    hidden: int = 512
    rank: int = 64
    att_dim: int = 256
    lr: float = 2e-5
    batch: int = 96
    epochs: int = 60
    max_len: int = 20
    min_count: int = 1
    g_activation: str = "sigmoid"
    styles: tuple = STYLES
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.styles = tuple(self.styles)
        if self.g_activation not in ("sigmoid", "tanh"):
            raise ValueError("g_activation must be 'sigmoid' or 'tanh'")

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "StyleConfig":
        d = dict(d or {})
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def init_factored_cell(p: ParamStore, prefix: str, n: int, H: int, r: int,
                       styles: Sequence[str]) -> None:
    """Shared Q/L/W/b per gate plus one S per (gate, style)."""
    for g in GATES:
        m = n if g == "x" else H
        if r > min(m, n):
            raise ValueError(f"rank {r} exceeds min({m}, {n}) for gate {g}")
        p.add(f"{prefix}.Q_{g}", (m, r))
        p.add(f"{prefix}.L_{g}", (r, n))
        p.add(f"{prefix}.W_{g}h", (m, H))
        if g != "x":
            p.add(f"{prefix}.b_{g}", (m,), "ones" if g == "f" else "zeros")
        for s in styles:
            t = p.add(f"{prefix}.S_{g}.{s}", (r, r), "zeros")
            t.data = style_matrix_init(p.rng, r).astype(p.dtype)


class FactoredCell:
    """One direction's cell for one style, with its gate matrices composed."""

    def __init__(self, p, prefix: str, style: str, g_activation: str = "sigmoid",
                 bypass_input_gate: bool = False):
        key = f"{prefix}.S_x.{style}"
        if key not in p:
            raise KeyError(f"unknown style {style!r}")
        self.bypass = bypass_input_gate
        self.g_act = ops.sigmoid if g_activation == "sigmoid" else ops.tanh
        M = {g: compose_gate_matrix(p[f"{prefix}.Q_{g}"], p[f"{prefix}.S_{g}.{style}"],
                                    p[f"{prefix}.L_{g}"]) for g in GATES}
        self.M_x, self.W_xh = M["x"], p[f"{prefix}.W_xh"]
        gates = ("i", "f", "o", "g")
        self.M = ops.concat([M[g] for g in gates], axis=0)
        self.W_h = ops.concat([p[f"{prefix}.W_{g}h"] for g in gates], axis=0)
        self.b = ops.concat([p[f"{prefix}.b_{g}"] for g in gates], axis=0)
        self.H = p[f"{prefix}.W_ih"].shape[0]

    def step(self, x, h_prev, c_prev):
        H = self.H
        if self.bypass:
            xr = x
        else:
            xr = ops.mul(ops.sigmoid(ops.add(linear(x, self.M_x), linear(h_prev, self.W_xh))), x)
        z = ops.add(ops.add(linear(xr, self.M), linear(h_prev, self.W_h)), self.b)
        i = ops.sigmoid(z[..., 0:H])
        f = ops.sigmoid(z[..., H:2 * H])
        o = ops.sigmoid(z[..., 2 * H:3 * H])
        g = self.g_act(z[..., 3 * H:4 * H])
        c = ops.add(ops.mul(f, c_prev), ops.mul(i, g))
        h = ops.mul(o, ops.tanh(c))
        return h, c

    def gates(self, x, h_prev):
        """(x_refined, i, f, o, g) for inspection."""
        H = self.H
        xr = x if self.bypass else ops.mul(
            ops.sigmoid(ops.add(linear(x, self.M_x), linear(h_prev, self.W_xh))), x)
        z = ops.add(ops.add(linear(xr, self.M), linear(h_prev, self.W_h)), self.b)
        return (xr, ops.sigmoid(z[..., 0:H]), ops.sigmoid(z[..., H:2 * H]),
                ops.sigmoid(z[..., 2 * H:3 * H]), self.g_act(z[..., 3 * H:4 * H]))


def cell_step(x, h_prev, c_prev, style: str, p, prefix: str = "fwd",
              g_activation: str = "sigmoid", bypass_input_gate: bool = False):
    """Single step of the factored cell; returns ``(h_t, c_t)``."""
    return FactoredCell(p, prefix, style, g_activation, bypass_input_gate).step(x, h_prev, c_prev)


def bidirectional_step(sequence, style: str, p, g_activation: str = "sigmoid",
                       h0=None, c0=None) -> Tensor:
    """Full-sequence bidirectional pass: ``y_t = Wf h^f_t + Wb h^b_t + b_y``."""
    X = sequence if isinstance(sequence, Tensor) else Tensor(sequence)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("bidirectional_step: need a non-empty (T, n) sequence")
    fwd = FactoredCell(p, "fwd", style, g_activation)
    bwd = FactoredCell(p, "bwd", style, g_activation)
    H = fwd.H
    zero = Tensor(np.zeros(H, dtype=X.dtype))
    h0 = zero if h0 is None else h0
    c0 = zero if c0 is None else c0
    T = X.shape[0]
    hf, hb = [None] * T, [None] * T
    h, c = h0, c0
    for t in range(T):
        h, c = fwd.step(X[t], h, c)
        hf[t] = h
    h, c = h0, c0
    for t in reversed(range(T)):
        h, c = bwd.step(X[t], h, c)
        hb[t] = h
    return ops.add(ops.add(linear(ops.stack(hf), p["out.W_f"]), linear(ops.stack(hb), p["out.W_b"])),
                   p["out.b_y"])


class StyledCaptioner:
    """Stylised caption decoder with per-style factors."""

    kind = "sf-bialstm"

    def __init__(self, config: StyleConfig, vocab: Vocabulary,
                 rng: Optional[np.random.Generator] = None):
        self.config = config
        self.vocab = vocab
        rng = rng if rng is not None else make_rng(config.seed)
        p = self.params = ParamStore(rng, dtype=config.dtype)
        H, E, D, A, V, r = (config.hidden, config.embed, config.feature_dim, config.att_dim,
                            len(vocab), config.rank)
        p.add("feat.W", (H, D))
        p.add("feat.b", (H,), "zeros")
        p.add("init.W_h", (H, H))
        p.add("init.b_h", (H,), "zeros")
        p.add("init.W_c", (H, H))
        p.add("init.b_c", (H,), "zeros")
        p.add("embed", (V, E), "normal", scale=0.1)
        for d in DIRECTIONS:
            init_factored_cell(p, d, E + H, H, r, config.styles)
        p.add("out.W_f", (H, H))
        p.add("out.W_b", (H, H))
        p.add("out.b_y", (H,), "zeros")
        p.add("att.W_a", (A, H))
        p.add("att.W_y", (A, H))
        p.add("att.v", (A,), "uniform", scale=0.5)
        p.add("readout.C", (V, 2 * H))
        p.add("readout.b", (V,), "zeros")
        self.history: list[float] = []

    # -- parameter partition -------------------------------------------------

    def style_param_names(self, style: str) -> list[str]:
        return [n for n in self.params.names() if n.endswith(f".{style}") and ".S_" in n]

    def shared_param_names(self) -> list[str]:
        return [n for n in self.params.names() if ".S_" not in n]

    # -- forward ---------------------------------------------------------------

    def _check_style(self, style: str) -> None:
        if style not in self.config.styles:
            raise KeyError(f"unknown style {style!r}; known: {self.config.styles}")

    def logits(self, features, in_ids: Sequence[int], style: str) -> Tensor:
        self._check_style(style)
        p = self.params
        F = features.features if isinstance(features, FeatureSet) else np.asarray(features)
        if F.ndim != 2 or F.shape[1] != self.config.feature_dim:
            raise ValueError(f"feature width {F.shape} != feature_dim {self.config.feature_dim}")
        Fh = ops.tanh(linear(Tensor(F.astype(p.dtype)), p["feat.W"], p["feat.b"]))
        f_bar = ops.mean(Fh, axis=0)
        h0 = ops.tanh(linear(f_bar, p["init.W_h"], p["init.b_h"]))
        c0 = ops.tanh(linear(f_bar, p["init.W_c"], p["init.b_c"]))
        T = len(in_ids)
        emb = ops.take(p["embed"], np.asarray(in_ids))
        xs = ops.concat([emb, ops.add(ops.mul(Tensor(np.zeros((T, 1), p.dtype)), f_bar), f_bar)],
                        axis=-1)
        fwd = FactoredCell(p, "fwd", style, self.config.g_activation)
        bwd = FactoredCell(p, "bwd", style, self.config.g_activation)
        hs = []
        h, c = h0, c0
        for t in range(T):
            h, c = fwd.step(xs[t], h, c)
            hs.append(h)
        Hf = ops.stack(hs)
        Hb, _ = reverse_prefix_states(bwd.step, xs, h0, c0)
        Y = ops.add(ops.add(linear(Hf, p["out.W_f"]), linear(Hb, p["out.W_b"])), p["out.b_y"])
        # soft attention over regions with the bidirectional output as query
        k = Fh.shape[0]
        A = p["att.v"].shape[0]
        e = ops.add(ops.reshape(linear(Fh, p["att.W_a"]), (1, k, A)),
                    ops.reshape(linear(Y, p["att.W_y"]), (T, 1, A)))
        alpha = ops.softmax(ops.matmul(ops.tanh(e), p["att.v"]), axis=-1)     # (T, k)
        ctx = ops.matmul(alpha, Fh)
        return linear(ops.concat([Y, ctx], axis=-1), p["readout.C"], p["readout.b"])

    def sequence_loss(self, features, caption_ids: Sequence[int], style: str) -> Tensor:
        """Per-token binary log-loss against the one-hot target, summed."""
        ids = list(caption_ids)
        lg = self.logits(features, [START_ID] + ids, style)
        tgt = np.asarray(ids + [END_ID])
        T, V = lg.shape
        logp = ops.log_softmax(lg, axis=-1)
        pos = ops.sum(logp[np.arange(T), tgt])
        off = np.ones((T, V), dtype=lg.dtype)
        off[np.arange(T), tgt] = 0.0
        neg = ops.sum(ops.mul(ops.log(ops.sub(1.0, ops.exp(logp)), floor=1e-12), off))
        return ops.neg(ops.add(pos, neg))

    def next_log_probs(self, features, prefix: Sequence[int], style: str) -> np.ndarray:
        with no_record():
            lg = self.logits(features, [START_ID] + list(prefix), style)
            return ops.log_softmax(lg[-1], axis=-1).data.astype(np.float64)

    def token_probabilities(self, item) -> np.ndarray:
        features, ids, style = item
        ids = list(ids)
        with no_record():
            lp = ops.log_softmax(self.logits(features, [START_ID] + ids, style), axis=-1).data
        tgt = ids + [END_ID]
        return np.exp(lp[np.arange(len(tgt)), tgt])

    def generate_ids(self, features, style: str, config: Optional[DecodeConfig] = None) -> list[int]:
        self._check_style(style)
        config = config or DecodeConfig(max_len=self.config.max_len)
        return decode(lambda prefix: self.next_log_probs(features, prefix, style), END_ID, config)

    def generate(self, features, style: str, config: Optional[DecodeConfig] = None) -> list[str]:
        return self.vocab.decode(self.generate_ids(features, style, config))

    def config_dict(self) -> dict:
        d = asdict(self.config)
        d["styles"] = list(d["styles"])
        return {"config": d, "vocab": self.vocab.to_list()}

    @classmethod
    def from_config_dict(cls, d: dict) -> "StyledCaptioner":
        return cls(StyleConfig.from_dict(d["config"]), Vocabulary.from_list(d["vocab"]))


def generate_styled(model: StyledCaptioner, features, style: str, mode: str = "greedy",
                    max_len: int = 20, beam: int = 3) -> list[str]:
    return model.generate(features, style, DecodeConfig(mode=mode, beam=beam, max_len=max_len))


def style_batches(examples: Sequence[tuple], styles: Sequence[str], batch: int):
    """Batch factory alternating styles: R, H, R, H, ... (leftovers appended)."""
    by_style = {s: [ex for ex in examples if ex[2] == s] for s in styles}

    def make(rng: np.random.Generator) -> list:
        queues = []
        for s in styles:
            exs = by_style[s]
            order = rng.permutation(len(exs))
            queues.append([[exs[i] for i in order[j:j + batch]] for j in range(0, len(exs), batch)])
        out = []
        for round_ in range(max(len(q) for q in queues)):
            for q in queues:
                if round_ < len(q):
                    out.append(q[round_])
        return out

    return make


def train_styled(records: Sequence[tuple], config: StyleConfig,
                 vocab: Optional[Vocabulary] = None,
                 rng: Optional[np.random.Generator] = None) -> StyledCaptioner:
    """Fit on ``(features, caption_tokens, style)`` triples.

    Batches hold a single style and alternate between styles; a batch
    updates the shared parameters and only its own style's factors.
    """
    rng = rng if rng is not None else make_rng(config.seed)
    for s in config.styles:
        if not any(r[2] == s for r in records):
            raise ValueError(f"train_styled: style {s!r} has no examples")
    for i, r in enumerate(records):
        if r[2] not in config.styles:
            raise ValueError(f"record {i}: unknown style {r[2]!r}")
    vocab = vocab or Vocabulary.build([r[1] for r in records], min_count=config.min_count)
    model = StyledCaptioner(config, vocab, rng)
    examples = [(f, vocab.encode(toks), s) for f, toks, s in records]
    shared = model.shared_param_names()
    state = AdamState(lr=config.lr)
    model.history = run_epochs(
        model.params, examples, lambda ex: model.sequence_loss(ex[0], ex[1], ex[2]),
        config.epochs, config.batch, state, rng,
        batches=style_batches(examples, config.styles, config.batch),
        trainable=lambda group: shared + model.style_param_names(group[0][2]))
    model.adam = state
    return model

"""Subword word embeddings trained with an attention-weighted CBOW objective.

A word's input vector is the sum of the vectors of its character n-grams
plus a whole-word row (fastText composition).  A masked centre word is
predicted from an attention-weighted sum of its context words' composed
vectors.  During training the attention query is the centre word's output
vector; a learned global query is trained alongside and used whenever the
centre is unknown (``predict_masked`` at inference, neighbour-free scoring).
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _kernels
from .nn import ParamStore
from .rng import make_rng
from .tensor import AdamState, Tape, Tensor, adam_step, backward, no_record, ops
from .text import tokenize

log = logging.getLogger(__name__)


def char_ngrams(word: str, n_min: int = 3, n_max: int = 6) -> list[str]:
    """Character n-grams of ``<word>``, ordered by n then position.

    A marked word shorter than ``n_min`` yields only its marked form.
    """
    marked = f"<{word}>"
    grams = [marked[i:i + n] for n in range(n_min, n_max + 1)
             for i in range(len(marked) - n + 1)]
    return grams or [marked]


def extract_subwords(word: str, n_min: int = 3, n_max: int = 6) -> list[str]:
    """N-grams of ``word`` followed by the whole-word token (always last)."""
    if not word:
        raise ValueError("extract_subwords: empty word")
    if not word.isprintable() or any(ch.isspace() for ch in word):
        raise ValueError(f"extract_subwords: word {word!r} has non-printable or space characters")
    if not 1 <= n_min <= n_max:
        raise ValueError(f"bad n-gram range [{n_min}, {n_max}]")
    return char_ngrams(word, n_min, n_max) + [f"<{word}>"]


@dataclass
class FtaweConfig:
    dim: int = 300
    window: int = 2
    n_min: int = 3
    n_max: int = 6
    buckets: int = 2 ** 20
    min_count: int = 1
    epochs: int = 5
    lr: float = 0.01
    batch: int = 64
    objective: str = "softmax"        # or "negative"
    negatives: int = 5
    output: str = "tied"              # "untied" scores with the V table instead
    seed: int = 0
    dtype: str = "float64"

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "FtaweConfig":
        d = dict(d or {})
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class WindowSample:
    """Masked centre word id and the ids of its (edge-truncated) context."""

    center: int
    context: list[int]

    def __post_init__(self):
        if not self.context:
            raise ValueError("window has no context words")


def windows(ids: Sequence[int], b: int) -> list[WindowSample]:
    out = []
    for i, c in enumerate(ids):
        ctx = [ids[j] for j in range(max(0, i - b), min(len(ids), i + b + 1)) if j != i]
        if ctx:
            out.append(WindowSample(c, ctx))
    return out


class SubwordVocabulary:
    """Word ids plus hashed n-gram buckets.

    Only buckets touched by in-vocabulary words get a row in the subword
    table; n-grams of unseen words that land in other buckets contribute
    nothing.
    """

    def __init__(self, words: Sequence[str], counts: Sequence[int], n_min=3, n_max=6,
                 buckets=2 ** 20, window=2, min_count=1):
        self.words = list(words)
        self.counts = list(counts)
        self.stoi = {w: i for i, w in enumerate(self.words)}
        self.n_min, self.n_max = n_min, n_max
        self.buckets, self.window, self.min_count = buckets, window, min_count
        self.bucket_row: dict[int, int] = {}
        for w in self.words:
            for g in char_ngrams(w, n_min, n_max):
                b = self.bucket(g)
                if b not in self.bucket_row:
                    self.bucket_row[b] = len(self.bucket_row)
        self._rows = [self.rows(w) for w in self.words]
        self.flat_idx = np.concatenate(self._rows) if self._rows else np.zeros(0, np.int64)
        self.offsets = np.concatenate([[0], np.cumsum([len(r) for r in self._rows])]).astype(np.int64)

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], config: FtaweConfig) -> "SubwordVocabulary":
        counts = Counter(t for s in sentences for t in s)
        words = sorted((w for w, c in counts.items() if c >= config.min_count),
                       key=lambda w: (-counts[w], w))
        return cls(words, [counts[w] for w in words], config.n_min, config.n_max,
                   config.buckets, config.window, config.min_count)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def n_rows(self) -> int:
        """Rows of the input table: one per word, then one per used bucket."""
        return len(self.words) + len(self.bucket_row)

    def bucket(self, ngram: str) -> int:
        return _kernels.fnv1a(ngram) % self.buckets

    def rows(self, word: str) -> np.ndarray:
        """Input-table rows whose sum is ``word``'s vector."""
        out = []
        wid = self.stoi.get(word)
        if wid is not None:
            out.append(wid)
        base = len(self.words)
        for g in char_ngrams(word, self.n_min, self.n_max):
            r = self.bucket_row.get(self.bucket(g))
            if r is not None:
                out.append(base + r)
        return np.asarray(out, dtype=np.int64)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi[t] for t in tokens if t in self.stoi]


@dataclass
class EmbeddingMatrices:
    U: np.ndarray      # (words + used buckets, dim) subword/word input rows
    V: np.ndarray      # (words, dim) output word vectors
    query: np.ndarray  # (dim,) learned attention query


class FtaWE:
    """fTA-WE model: vocabulary, parameters, scoring and queries."""

    kind = "ftawe"

    def __init__(self, vocab: SubwordVocabulary, config: FtaweConfig,
                 rng: Optional[np.random.Generator] = None):
        self.vocab = vocab
        self.config = config
        rng = rng if rng is not None else make_rng(config.seed)
        self.params = ParamStore(rng, dtype=config.dtype)
        D = config.dim
        self.params.add("U", (vocab.n_rows, D), "uniform", scale=1.0 / D)
        self.params.add("V", (len(vocab), D), "uniform", scale=1.0 / D)
        self.params.add("query", (D,), "uniform", scale=1.0 / D)
        self.history: list[float] = []

    # -- composition -------------------------------------------------------

    def composed(self) -> Tensor:
        """Composed vectors of every vocabulary word, (N, dim)."""
        v = self.vocab
        return ops.embedding_bag(self.params["U"], v.flat_idx, v.offsets)

    def word_vector(self, word: str) -> np.ndarray:
        rows = self.vocab.rows(word)
        U = self.params["U"].data
        if rows.size == 0:
            return np.zeros(U.shape[1], dtype=U.dtype)
        return _kernels.segment_sum(U, rows, np.array([0, rows.size]))[0]

    def config_dict(self) -> dict:
        return {"config": asdict(self.config), "words": self.vocab.words,
                "counts": self.vocab.counts}

    @classmethod
    def from_config_dict(cls, d: dict) -> "FtaWE":
        config = FtaweConfig.from_dict(d["config"])
        vocab = SubwordVocabulary(d["words"], d["counts"], config.n_min, config.n_max,
                                  config.buckets, config.window, config.min_count)
        return cls(vocab, config)

    @property
    def matrices(self) -> EmbeddingMatrices:
        return EmbeddingMatrices(self.params["U"].data, self.params["V"].data,
                                 self.params["query"].data)

    # -- scoring -----------------------------------------------------------

    def _output_table(self, composed: Tensor) -> Tensor:
        return composed if self.config.output == "tied" else self.params["V"]

    def _attend(self, ctx_vecs: Tensor, queries: Tensor, mask: np.ndarray):
        # ctx_vecs (B, W, D), queries (B, D) -> weights (B, W), attended (B, D)
        B, W, D = ctx_vecs.shape
        scores = ops.reshape(ops.matmul(ctx_vecs, ops.reshape(queries, (B, D, 1))), (B, W))
        scores = ops.scale(scores, 1.0 / np.sqrt(D))
        att = ops.softmax(scores, axis=-1, mask=mask)
        c_att = ops.reshape(ops.matmul(ops.reshape(att, (B, 1, W)), ctx_vecs), (B, D))
        return att, c_att

    def predict_masked(self, window: WindowSample, query: str = "learned"):
        """Distribution over the vocabulary for the masked centre word.

        Returns ``(probs, attention_weights)``.  ``query="center"`` uses the
        true centre's output vector as the attention query (the training
        signal); ``"learned"`` uses the global query vector.
        """
        if not window.context:
            raise ValueError("predict_masked: empty context")
        with no_record():
            comp = self.composed()
            ctx = ops.reshape(ops.take(comp, np.asarray(window.context)), (1, len(window.context), -1))
            if query == "center":
                q = ops.reshape(ops.take(self.params["V"], [window.center]), (1, -1))
            elif query == "learned":
                q = ops.reshape(self.params["query"], (1, -1))
            else:
                raise ValueError(f"unknown query {query!r}")
            att, c_att = self._attend(ctx, q, np.ones((1, len(window.context)), bool))
            out = self._output_table(comp)
            probs = ops.softmax(ops.matmul(c_att, ops.transpose(out)), axis=-1)
        return probs.data[0], att.data[0]

    def batch_loss(self, centers: np.ndarray, ctx: np.ndarray, mask: np.ndarray,
                   rng: Optional[np.random.Generator] = None) -> Tensor:
        """Masked-word loss for a batch of windows (both query branches)."""
        comp = self.composed()
        B, W = ctx.shape
        ctx_vecs = ops.take(comp, ctx)                                   # (B, W, D)
        out = self._output_table(comp)
        q_center = ops.take(self.params["V"], centers)
        q_global = ops.add(ops.mul(Tensor(np.zeros((B, 1), dtype=comp.dtype)),
                                   self.params["query"]), self.params["query"])
        total = None
        for q in (q_center, q_global):
            _, c_att = self._attend(ctx_vecs, q, mask)
            if self.config.objective == "softmax":
                logp = ops.log_softmax(ops.matmul(c_att, ops.transpose(out)), axis=-1)
                term = ops.neg(ops.mean(logp[np.arange(B), centers]))
            elif self.config.objective == "negative":
                term = self._negative_sampling(c_att, out, centers, rng)
            else:
                raise ValueError(f"unknown objective {self.config.objective!r}")
            total = term if total is None else ops.add(total, term)
        return total

    def _negative_sampling(self, c_att: Tensor, out: Tensor, centers: np.ndarray,
                           rng: Optional[np.random.Generator]) -> Tensor:
        if rng is None:
            raise ValueError("negative sampling needs an rng")
        k = self.config.negatives
        freq = np.asarray(self.vocab.counts, dtype=np.float64) ** 0.75
        negs = rng.choice(len(self.vocab), size=(len(centers), k), p=freq / freq.sum())
        ids = np.concatenate([centers[:, None], negs], axis=1)
        sign = np.ones(ids.shape)
        sign[:, 1:] = -1.0
        vecs = ops.take(out, ids)                                        # (B, 1+k, D)
        B, D = c_att.shape
        s = ops.reshape(ops.matmul(vecs, ops.reshape(c_att, (B, D, 1))), ids.shape)
        ll = ops.log(ops.sigmoid(ops.mul(s, sign.astype(c_att.dtype))), floor=1e-12)
        return ops.neg(ops.mean(ops.sum(ll, axis=1)))

    # -- queries -----------------------------------------------------------

    def nearest_neighbors(self, word: str, k: int) -> list[tuple[str, float]]:
        """Top-``k`` vocabulary words by cosine similarity (ties: smaller id)."""
        if k <= 0:
            return []
        with no_record():
            M = self.composed().data
        q = self.word_vector(word)
        norms = np.linalg.norm(M, axis=1) * np.linalg.norm(q)
        sims = np.where(norms > 0, M @ q / np.where(norms > 0, norms, 1.0), 0.0)
        order = np.lexsort((np.arange(len(sims)), -sims))[:k]
        return [(self.vocab.words[i], float(sims[i])) for i in order]

    def export_vectors(self, path) -> None:
        with no_record():
            M = self.composed().data
        write_vectors(path, self.vocab.words, M)


def train_embeddings(corpus: Iterable, config: FtaweConfig,
                     rng: Optional[np.random.Generator] = None) -> FtaWE:
    """Train fTA-WE on tokenised sentences (strings are tokenised first)."""
    sents = [tokenize(s) if isinstance(s, str) else list(s) for s in corpus]
    sents = [s for s in sents if s]
    if not sents:
        raise ValueError("train_embeddings: empty corpus")
    rng = rng if rng is not None else make_rng(config.seed)
    vocab = SubwordVocabulary.build(sents, config)
    model = FtaWE(vocab, config, rng)
    samples = [w for s in sents for w in windows(vocab.encode(s), config.window)]
    if not samples:
        raise ValueError("train_embeddings: corpus has no word with a context")
    W = 2 * config.window
    centers = np.array([s.center for s in samples], dtype=np.int64)
    ctx = np.zeros((len(samples), W), dtype=np.int64)
    mask = np.zeros((len(samples), W), dtype=bool)
    for i, s in enumerate(samples):
        ctx[i, :len(s.context)] = s.context
        mask[i, :len(s.context)] = True
    state = AdamState(lr=config.lr)
    names = model.params.names()
    plist = [model.params[n] for n in names]
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        total, n_batches = 0.0, 0
        for start in range(0, len(order), config.batch):
            sel = order[start:start + config.batch]
            with Tape() as tape:
                loss = model.batch_loss(centers[sel], ctx[sel], mask[sel], rng)
            grads = backward(tape, loss, plist)
            adam_step(model.params, {n: grads[p] for n, p in zip(names, plist)}, state)
            total += loss.item()
            n_batches += 1
        model.history.append(total / n_batches)
        log.debug("ftawe epoch %d loss %.4f", epoch, model.history[-1])
    return model


def masked_accuracy(model: FtaWE, sentences: Iterable[Sequence[str]],
                    query: str = "learned") -> float:
    hits = total = 0
    for s in sentences:
        for w in windows(model.vocab.encode(s), model.config.window):
            probs, _ = model.predict_masked(w, query=query)
            hits += int(np.argmax(probs) == w.center)
            total += 1
    return hits / total if total else 0.0


# ---------------------------------------------------------------------------
# word-vector text format: "<count> <dim>" header, then "word v1 ... vdim"


@dataclass
class WordVectors:
    words: list[str]
    vectors: np.ndarray
    index: dict = field(init=False)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def __getitem__(self, word: str) -> np.ndarray:
        return self.vectors[self.index[word]]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def write_vectors(path, words: Sequence[str], vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors)
    if vectors.shape[0] != len(words):
        raise ValueError("one vector per word required")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(words)} {vectors.shape[1]}\n")
        for w, v in zip(words, vectors):
            fh.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")


def read_vectors(path) -> WordVectors:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}:1: expected '<count> <dim>' header")
        count, dim = int(header[0]), int(header[1])
        words, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            words.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(words) != count:
        raise ValueError(f"{path}: header declares {count} words, found {len(words)}")
    vecs = np.asarray(rows, dtype=np.float64).reshape(len(words), dim)
    return WordVectors(words, vecs)


def config_dict(config: FtaweConfig) -> dict:
    return asdict(config)

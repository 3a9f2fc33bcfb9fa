"""Caption/summary metrics: BLEU@N, exact-match METEOR, ROUGE-1/2/L, perplexity.

All functions take pre-tokenised sequences (lists of strings).
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Iterable, Protocol, Sequence

import numpy as np

from . import _kernels

Tokens = Sequence[str]


@dataclass(frozen=True)
class MetricReport:
    name: str
    precision: float
    recall: float
    score: float

    def as_dict(self) -> dict:
        return asdict(self)


def ngram_counts(tokens: Tokens, n: int) -> Counter:
    if n < 1:
        raise ValueError("n must be >= 1")
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# BLEU


def _closest_ref_len(c: int, refs: Sequence[Tokens]) -> int:
    return min((abs(len(r) - c), len(r)) for r in refs)[1]


def _clipped(candidate: Tokens, references: Sequence[Tokens], n: int) -> tuple[int, int]:
    cand = ngram_counts(candidate, n)
    max_ref: Counter = Counter()
    for ref in references:
        for g, k in ngram_counts(ref, n).items():
            if k > max_ref[g]:
                max_ref[g] = k
    matched = sum(min(k, max_ref[g]) for g, k in cand.items())
    return matched, max(len(candidate) - n + 1, 0)


def brevity_penalty(c: int, r: int) -> float:
    if c == 0:
        return 0.0
    return 1.0 if c > r else math.exp(1.0 - r / c)


def bleu_n(candidate: Tokens, references: Sequence[Tokens], N: int = 4) -> float:
    """Sentence BLEU: geometric mean of clipped n-gram precisions for
    n = 1..N times the brevity penalty.  No smoothing."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not references:
        raise ValueError("bleu_n needs at least one reference")
    if len(candidate) == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, N + 1):
        matched, total = _clipped(candidate, references, n)
        if matched == 0 or total == 0:
            return 0.0
        log_p += math.log(matched / total)
    bp = brevity_penalty(len(candidate), _closest_ref_len(len(candidate), references))
    return bp * math.exp(log_p / N)


def corpus_bleu(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]],
                N: int = 4) -> float:
    """Corpus BLEU with n-gram statistics pooled across segments."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    matched = np.zeros(N)
    totals = np.zeros(N)
    c_len = r_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("every candidate needs at least one reference")
        c_len += len(cand)
        r_len += _closest_ref_len(len(cand), refs)
        for n in range(1, N + 1):
            m, t = _clipped(cand, refs, n)
            matched[n - 1] += m
            totals[n - 1] += t
    if c_len == 0 or np.any(matched == 0):
        return 0.0
    log_p = float(np.mean(np.log(matched / totals)))
    return brevity_penalty(c_len, r_len) * math.exp(log_p)


# ---------------------------------------------------------------------------
# ROUGE

ROUGE_L_BETA = 1.2


def _f(p: float, r: float, beta: float = 1.0) -> float:
    if p == 0.0 or r == 0.0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * p * r / (r + b2 * p)


def lcs_length(a: Tokens, b: Tokens) -> int:
    if not a or not b:
        return 0
    ids: dict[str, int] = {}
    ai = np.array([ids.setdefault(t, len(ids)) for t in a], dtype=np.int64)
    bi = np.array([ids.setdefault(t, len(ids)) for t in b], dtype=np.int64)
    return _kernels.lcs_length(ai, bi)


def _rouge_single(candidate: Tokens, reference: Tokens, variant) -> MetricReport:
    name = f"rouge-{str(variant).lower()}"
    if variant in ("L", "l"):
        lcs = lcs_length(candidate, reference)
        r = lcs / len(reference)
        p = lcs / len(candidate) if candidate else 0.0
        return MetricReport(name, p, r, _f(p, r, ROUGE_L_BETA))
    n = int(variant)
    cand, ref = ngram_counts(candidate, n), ngram_counts(reference, n)
    n_ref, n_cand = sum(ref.values()), sum(cand.values())
    if n_ref == 0 or n_cand == 0:
        # sequences too short to hold an n-gram; only an exact match scores
        same = 1.0 if (n_ref == n_cand and list(candidate) == list(reference)) else 0.0
        return MetricReport(name, same, same, same)
    overlap = sum(min(k, ref[g]) for g, k in cand.items())
    p, r = overlap / n_cand, overlap / n_ref
    return MetricReport(name, p, r, _f(p, r))


def rouge(candidate: Tokens, reference, variant="1") -> MetricReport:
    """ROUGE-1/2/L for one candidate.  ``reference`` may be a token list or
    a list of token lists; with several references the best F is kept."""
    if variant not in ("1", "2", "L", 1, 2, "l"):
        raise ValueError(f"unknown ROUGE variant {variant!r}")
    refs = [reference] if reference and isinstance(reference[0], str) else list(reference)
    if not refs or any(len(r) == 0 for r in refs):
        raise ValueError("ROUGE needs a non-empty reference")
    reports = [_rouge_single(candidate, r, variant if variant != "l" else "L") for r in refs]
    return max(reports, key=lambda m: m.score)


# ---------------------------------------------------------------------------
# METEOR (exact-match stage only)


@dataclass(frozen=True)
class MeteorAlignment:
    matches: int
    chunks: int


def meteor_alignment(candidate: Tokens, reference: Tokens) -> MeteorAlignment:
    """Maximum exact-match alignment with the fewest chunks.

    A chunk is a maximal run of matches adjacent in both sequences.
    """
    cand, ref = list(candidate), list(reference)
    need = {w: min(k, Counter(ref)[w]) for w, k in Counter(cand).items()}
    m = sum(need.values())
    if m == 0:
        return MeteorAlignment(0, 0)
    ref_pos: dict[str, list[int]] = {}
    for j, w in enumerate(ref):
        ref_pos.setdefault(w, []).append(j)
    # occurrences of each word in cand[i:]
    left = [Counter(cand[i:]) for i in range(len(cand) + 1)]

    @lru_cache(maxsize=None)
    def best(i: int, used: int, prev_j: int) -> float:
        if i == len(cand):
            return 0.0
        w = cand[i]
        quota = need.get(w, 0)
        done = sum(1 for j in ref_pos.get(w, ()) if used >> j & 1)
        out = math.inf
        # skipping is legal only if the word's quota is still reachable
        if quota - done <= left[i + 1][w]:
            out = best(i + 1, used, -1)
        if done < quota:
            for j in ref_pos[w]:
                if used >> j & 1:
                    continue
                cost = 0 if (prev_j >= 0 and j == prev_j + 1) else 1
                out = min(out, cost + best(i + 1, used | (1 << j), j))
        return out

    chunks = int(best(0, 0, -1))
    best.cache_clear()
    return MeteorAlignment(m, chunks)


def meteor_exact(candidate: Tokens, reference: Tokens) -> float:
    """F_mean = 10PR/(R+9P) scaled by 1 - 0.5 (chunks/matches)^3."""
    al = meteor_alignment(candidate, reference)
    if al.matches == 0:
        return 0.0
    p = al.matches / len(candidate)
    r = al.matches / len(reference)
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (al.chunks / al.matches) ** 3
    return f_mean * (1.0 - penalty)


def meteor_multi(candidate: Tokens, references: Sequence[Tokens]) -> float:
    return max(meteor_exact(candidate, r) for r in references)


# ---------------------------------------------------------------------------
# perplexity

PROB_FLOOR = 1e-12


class TokenProbabilityModel(Protocol):
    def token_probabilities(self, item) -> np.ndarray:
        """Probability the model assigns to each gold token of ``item``."""


def perplexity_from_probs(probs: Iterable[float], floor: float = PROB_FLOOR) -> float:
    p = np.maximum(np.asarray(list(probs), dtype=np.float64), floor)
    if p.size == 0:
        raise ValueError("perplexity of an empty corpus is undefined")
    return float(np.exp(-np.mean(np.log(p))))


def perplexity(model: TokenProbabilityModel, corpus: Iterable, floor: float = PROB_FLOOR) -> float:
    """``exp`` of the mean per-token negative log-likelihood over ``corpus``."""
    probs: list[float] = []
    for item in corpus:
        probs.extend(np.asarray(model.token_probabilities(item), dtype=np.float64).tolist())
    return perplexity_from_probs(probs, floor)

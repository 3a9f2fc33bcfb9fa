import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capsumt import metrics

# ---------------------------------------------------------------------------
# brute-force oracles: explicit enumeration, no shared code with the library


def o_ngrams(seq, n):
    return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]


def o_clipped(cand, refs, n):
    grams = o_ngrams(cand, n)
    matched = 0
    for g in set(grams):
        matched += min(grams.count(g), max(o_ngrams(r, n).count(g) for r in refs))
    return matched, len(grams)


def o_bleu(cand, refs, N):
    if not cand:
        return 0.0
    log_p = 0.0
    for n in range(1, N + 1):
        m, t = o_clipped(cand, refs, n)
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t)
    c = len(cand)
    r = sorted(refs, key=lambda x: (abs(len(x) - c), len(x)))[0]
    bp = 1.0 if c > len(r) else math.exp(1.0 - len(r) / c)
    return bp * math.exp(log_p / N)


def o_is_subsequence(sub, seq):
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def o_lcs(a, b):
    best = 0
    for mask in range(1 << len(a)):
        sub = [a[i] for i in range(len(a)) if mask >> i & 1]
        if len(sub) > best and o_is_subsequence(sub, b):
            best = len(sub)
    return best


def o_alignments(cand, ref):
    """Every injective exact-match alignment as a sorted list of (i, j)."""
    out = []

    def rec(i, used, pairs):
        if i == len(cand):
            out.append(list(pairs))
            return
        rec(i + 1, used, pairs)
        for j, w in enumerate(ref):
            if w == cand[i] and j not in used:
                rec(i + 1, used | {j}, pairs + [(i, j)])

    rec(0, frozenset(), [])
    return out


def o_chunks(pairs):
    chunks = 0
    for k, (i, j) in enumerate(pairs):
        if k == 0 or not (pairs[k - 1][0] == i - 1 and pairs[k - 1][1] == j - 1):
            chunks += 1
    return chunks


def o_meteor_stats(cand, ref):
    al = o_alignments(cand, ref)
    m = max(len(a) for a in al)
    return m, min(o_chunks(a) for a in al if len(a) == m) if m else 0


def o_rouge_n(cand, ref, n):
    c, r = o_ngrams(cand, n), o_ngrams(ref, n)
    overlap = sum(min(c.count(g), r.count(g)) for g in set(c))
    return overlap, len(c), len(r)


def sample_pairs(count=500, seed=0, alphabet="abcd", max_len=8):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        c = list(rng.choice(list(alphabet), rng.integers(1, max_len + 1)))
        r = list(rng.choice(list(alphabet), rng.integers(1, max_len + 1)))
        pairs.append((c, r))
    return pairs


PAIRS = sample_pairs()

# ---------------------------------------------------------------------------
# oracle agreement on 500 sampled pairs


def test_bleu_matches_oracle():
    for c, r in PAIRS:
        for N in (1, 2, 3, 4):
            assert metrics.bleu_n(c, [r], N) == o_bleu(c, [r], N)


def test_multi_reference_bleu_matches_oracle():
    for (c, r1), (_, r2) in zip(PAIRS[::2], PAIRS[1::2]):
        assert metrics.bleu_n(c, [r1, r2], 2) == o_bleu(c, [r1, r2], 2)


def test_rouge_l_matches_subsequence_enumeration():
    for c, r in PAIRS:
        lcs = o_lcs(c, r)
        assert metrics.lcs_length(c, r) == lcs
        rep = metrics.rouge(c, r, "L")
        assert rep.recall == lcs / len(r)
        assert rep.precision == lcs / len(c)


def test_rouge_n_matches_oracle():
    for c, r in PAIRS:
        for n in (1, 2):
            overlap, nc, nr = o_rouge_n(c, r, n)
            rep = metrics.rouge(c, r, str(n))
            if nc and nr:
                assert rep.precision == overlap / nc
                assert rep.recall == overlap / nr


def test_meteor_alignment_matches_exhaustive_search():
    for c, r in PAIRS:
        m, ch = o_meteor_stats(c, r)
        al = metrics.meteor_alignment(c, r)
        assert (al.matches, al.chunks) == (m, ch)
        if m:
            p, rec = m / len(c), m / len(r)
            expected = 10 * p * rec / (rec + 9 * p) * (1.0 - 0.5 * (ch / m) ** 3)
            assert metrics.meteor_exact(c, r) == expected


# ---------------------------------------------------------------------------
# hand-computed examples

def test_bleu_identical_is_one():
    s = "the cat sat on the mat".split()
    for N in (1, 2, 3, 4):
        assert metrics.bleu_n(s, [s], N) == 1.0


def test_bleu_clipping_example():
    assert metrics.bleu_n("the the the the".split(), ["the cat".split()], 1) == 0.25


def test_bleu_brevity_penalty_example():
    assert metrics.bleu_n(["cat"], [["the", "cat"]], 1) == pytest.approx(math.exp(1 - 2))


def test_bleu_empty_candidate_and_errors():
    assert metrics.bleu_n([], [["a"]], 1) == 0.0
    with pytest.raises(ValueError):
        metrics.bleu_n(["a"], [], 1)
    with pytest.raises(ValueError):
        metrics.bleu_n(["a"], [["a"]], 0)


def test_corpus_bleu_pools_statistics():
    cands = ["a b c d".split(), "e f g h".split()]
    refs = [["a b c d".split()], ["e f x h".split()]]
    # unigram 7/8, bigram 4/6, trigram 2/4, 4-gram 1/2
    expected = math.exp((math.log(7 / 8) + math.log(4 / 6) + math.log(2 / 4) + math.log(1 / 2)) / 4)
    assert metrics.corpus_bleu(cands, refs, 4) == pytest.approx(expected, rel=1e-12)


def test_rouge_examples():
    s = "a b c".split()
    for v in ("1", "2", "L"):
        rep = metrics.rouge(s, s, v)
        assert (rep.precision, rep.recall, rep.score) == (1.0, 1.0, 1.0)
    rep = metrics.rouge("the cat sat".split(), "the cat".split(), "1")
    assert rep.recall == 1.0 and rep.precision == pytest.approx(2 / 3)
    assert metrics.rouge("a b c d".split(), "a c b d".split(), "L").recall == 0.75


def test_rouge_l_uses_recall_weighted_f():
    rep = metrics.rouge("a b c d".split(), "a c b d e f".split(), "L")
    p, r, b2 = 3 / 4, 3 / 6, 1.2 ** 2
    assert rep.score == pytest.approx((1 + b2) * p * r / (r + b2 * p))


def test_rouge_errors_and_multi_reference():
    with pytest.raises(ValueError):
        metrics.rouge(["a"], [], "1")
    with pytest.raises(ValueError):
        metrics.rouge(["a"], ["a"], "3")
    best = metrics.rouge("a b".split(), [["x"], ["a", "b"]], "1")
    assert best.score == 1.0


def test_meteor_examples():
    for n in (1, 3, 6):
        s = [f"w{i}" for i in range(n)]
        assert metrics.meteor_exact(s, s) == 1 - 0.5 / n ** 3
    assert metrics.meteor_exact(["a"], ["b"]) == 0.0
    assert metrics.meteor_exact(["a"], ["a"]) == 0.5


def test_meteor_prefers_fewest_chunks():
    # "a" can align to either ref position; the contiguous choice gives one chunk
    al = metrics.meteor_alignment("a b".split(), "a x a b".split())
    assert (al.matches, al.chunks) == (2, 1)


def test_perplexity_examples():
    V = 7
    assert metrics.perplexity_from_probs([1 / V] * 5) == pytest.approx(V)
    assert metrics.perplexity_from_probs([1.0, 1.0]) == 1.0
    # mean NLL of 0.5 and 0.125 is 2 ln 2, so perplexity 4
    assert metrics.perplexity_from_probs([0.5, 0.125]) == pytest.approx(4.0)
    assert metrics.perplexity_from_probs([0.0]) == pytest.approx(1e12)
    with pytest.raises(ValueError):
        metrics.perplexity_from_probs([])


def test_perplexity_over_model():
    class Uniform:
        def token_probabilities(self, item):
            return np.full(len(item), 0.25)

    assert metrics.perplexity(Uniform(), [[1, 2], [3]]) == pytest.approx(4.0)


# ---------------------------------------------------------------------------
# properties

tokens = st.lists(st.sampled_from("abcde"), min_size=1, max_size=8)


@settings(max_examples=300, deadline=None)
@given(tokens, tokens)
def test_scores_lie_in_unit_interval(c, r):
    vals = [metrics.bleu_n(c, [r], 4), metrics.meteor_exact(c, r)]
    vals += [metrics.rouge(c, r, v).score for v in ("1", "2", "L")]
    assert all(0.0 <= v <= 1.0 for v in vals)


@settings(max_examples=200, deadline=None)
@given(tokens, tokens, st.randoms(use_true_random=False))
def test_bleu1_is_permutation_invariant(c, r, rnd):
    perm = list(c)
    rnd.shuffle(perm)
    assert metrics.bleu_n(perm, [r], 1) == metrics.bleu_n(c, [r], 1)


def longest_common_substring(a, b):
    best = 0
    for i, j in itertools.product(range(len(a)), range(len(b))):
        k = 0
        while i + k < len(a) and j + k < len(b) and a[i + k] == b[j + k]:
            k += 1
        best = max(best, k)
    return best


@settings(max_examples=300, deadline=None)
@given(tokens, tokens)
def test_lcs_dominates_longest_contiguous_match(c, r):
    assert metrics.lcs_length(c, r) >= longest_common_substring(c, r)


@settings(max_examples=100, deadline=None)
@given(tokens)
def test_identical_inputs_score_one(s):
    for v in ("1", "L"):
        assert metrics.rouge(s, s, v).score == 1.0
    assert metrics.bleu_n(s, [s], 1) == 1.0


def test_ngram_counts_total():
    s = "a b a b c".split()
    for n in (1, 2, 3):
        assert sum(metrics.ngram_counts(s, n).values()) == len(s) - n + 1

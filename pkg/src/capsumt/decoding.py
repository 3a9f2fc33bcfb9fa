"""Greedy and beam decoding over a next-token log-probability function."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

NextLogProbs = Callable[[Sequence[int]], np.ndarray]


@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "greedy"
    beam: int = 3
    max_len: int = 20

    def __post_init__(self):
        if self.mode not in ("greedy", "beam"):
            raise ValueError(f"decode mode must be 'greedy' or 'beam', got {self.mode!r}")
        if self.beam < 1:
            raise ValueError("beam width must be >= 1")
        if self.max_len < 0:
            raise ValueError("max_len must be >= 0")

    @classmethod
    def from_dict(cls, d: dict | None) -> "DecodeConfig":
        d = dict(d or {})
        return cls(mode=d.get("mode", "greedy"), beam=int(d.get("beam", 3)),
                   max_len=int(d.get("max_len", 20)))


def greedy(next_log_probs: NextLogProbs, end_id: int, max_len: int) -> list[int]:
    """Argmax at each step; ties go to the smallest token id."""
    out: list[int] = []
    for _ in range(max_len):
        lp = next_log_probs(out)
        tok = int(np.argmax(lp))          # first maximum == smallest id
        if tok == end_id:
            break
        out.append(tok)
    return out


def beam_search(next_log_probs: NextLogProbs, end_id: int, max_len: int,
                width: int) -> list[int]:
    """Length-unnormalised beam search.

    Each step ranks all one-token extensions of the live hypotheses by
    total log-probability (ties: earlier hypothesis, then smaller token id)
    and keeps the best ``width``.  Extensions ending in ``end_id`` retire to
    the finished pool and shrink the beam.  With ``width == 1`` this is
    exactly :func:`greedy`.
    """
    if max_len == 0:
        return []
    live: list[tuple[float, list[int]]] = [(0.0, [])]
    finished: list[tuple[float, list[int]]] = []
    for step in range(max_len):
        cands = []
        for h_rank, (score, seq) in enumerate(live):
            lp = next_log_probs(seq)
            for tok in np.argsort(-lp, kind="stable")[:width]:
                cands.append((score + float(lp[tok]), h_rank, int(tok), seq))
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        new_live = []
        for score, _, tok, seq in cands[:width]:
            if tok == end_id:
                finished.append((score, seq))
            else:
                new_live.append((score, seq + [tok]))
        live = new_live[: width]
        if not live:
            break
        best_done = max((s for s, _ in finished), default=-np.inf)
        if best_done >= live[0][0]:
            break
    pool = finished + live
    pool.sort(key=lambda c: -c[0])
    return pool[0][1]


def decode(next_log_probs: NextLogProbs, end_id: int, config: DecodeConfig) -> list[int]:
    if config.max_len == 0:
        return []
    if config.mode == "greedy":
        return greedy(next_log_probs, end_id, config.max_len)
    return beam_search(next_log_probs, end_id, config.max_len, config.beam)

"""Seeded randomness.  Every generator is numpy's Philox (counter-based),
so a seed fully determines initialisation, shuffling and dropout masks."""
from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def child_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent stream ``stream`` for the same run seed."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, int(stream), 0]))

"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Run without ``CAPSUMT_NO_NUMBA`` set; the numba column is empty otherwise.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from capsumt import _kernels


def workloads(rng: np.random.Generator) -> dict:
    table = rng.normal(size=(20000, 100))
    counts = rng.integers(1, 30, size=5000)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    flat = rng.integers(0, table.shape[0], size=offsets[-1]).astype(np.int64)
    grad = rng.normal(size=(len(counts), 100))
    idx = rng.integers(0, 2000, size=50000).astype(np.int64)
    rows = rng.normal(size=(idx.size, 64))
    a = rng.integers(0, 50, size=400).astype(np.int64)
    b = rng.integers(0, 50, size=400).astype(np.int64)
    text = np.frombuffer(("<subword>" * 50).encode(), dtype=np.uint8)
    return {
        "scatter_add_rows": lambda k: k(np.zeros((2000, 64)), idx, rows),
        "segment_sum": lambda k: k(table, flat, offsets),
        "segment_scatter": lambda k: k(grad, flat, offsets, table.shape[0]),
        "lcs_length": lambda k: k(a, b),
        "fnv1a": lambda k: k(text),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    jobs = workloads(np.random.default_rng(0))
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, job in jobs.items():
        t_np = min(timeit.repeat(lambda: job(_kernels.NUMPY_KERNELS[name]),
                                 number=1, repeat=args.repeat)) * 1e3
        nb = _kernels.NUMBA_KERNELS.get(name)
        if nb is None:
            print(f"{name:<18}{t_np:>12.3f}{'-':>12}{'-':>10}")
            continue
        job(nb)  # compile outside the timed region
        t_nb = min(timeit.repeat(lambda: job(nb), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()

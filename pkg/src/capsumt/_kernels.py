"""Hot inner loops, compiled with numba when available.

Set ``CAPSUMT_NO_NUMBA=1`` to force the pure-numpy path (useful for
debugging and for the benchmark in ``benchmarks/bench_kernels.py``).
Both paths return identical results; the tests run against whichever one
is active and ``tests/test_kernels.py`` checks them against each other.
"""
from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("CAPSUMT_NO_NUMBA", "0").lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


# ---------------------------------------------------------------------------
# pure numpy reference path


def _scatter_add_rows_np(out, idx, rows):
    np.add.at(out, idx, rows)
    return out


def _segment_sum_np(table, flat_idx, offsets):
    counts = np.diff(offsets)
    out = np.zeros((len(counts), table.shape[1]), dtype=table.dtype)
    if flat_idx.size:
        seg = np.repeat(np.arange(len(counts)), counts)
        np.add.at(out, seg, table[flat_idx])
    return out


def _segment_scatter_np(grad_out, flat_idx, offsets, n_rows):
    counts = np.diff(offsets)
    out = np.zeros((n_rows, grad_out.shape[1]), dtype=grad_out.dtype)
    if flat_idx.size:
        seg = np.repeat(np.arange(len(counts)), counts)
        np.add.at(out, flat_idx, grad_out[seg])
    return out


def _lcs_length_np(a, b):
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        eq = (b == a[i])
        cur = np.zeros(m + 1, dtype=np.int64)
        # the row recurrence has a left-to-right dependency, so it cannot be
        # fully vectorised; keep the loop but over numpy scalars
        for j in range(m):
            if eq[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = cur[j] if cur[j] > prev[j + 1] else prev[j + 1]
        prev = cur
    return int(prev[m])


def _fnv1a_np(data):
    h = 2166136261
    for byte in data.tolist():
        # fastText sign-extends bytes before xor
        if byte > 127:
            byte = byte - 256
        h = (h ^ (byte & 0xFFFFFFFF)) & 0xFFFFFFFF
        h = (h * 16777619) & 0xFFFFFFFF
    return h


# ---------------------------------------------------------------------------
# numba path

if USE_NUMBA:

    @njit(cache=True, nogil=True)
    def _scatter_add_rows_nb(out, idx, rows):
        for i in range(idx.shape[0]):
            r = idx[i]
            for j in range(out.shape[1]):
                out[r, j] += rows[i, j]
        return out

    @njit(cache=True, nogil=True)
    def _segment_sum_nb(table, flat_idx, offsets):
        n_seg = offsets.shape[0] - 1
        out = np.zeros((n_seg, table.shape[1]), dtype=table.dtype)
        for s in range(n_seg):
            for p in range(offsets[s], offsets[s + 1]):
                r = flat_idx[p]
                for j in range(table.shape[1]):
                    out[s, j] += table[r, j]
        return out

    @njit(cache=True, nogil=True)
    def _segment_scatter_nb(grad_out, flat_idx, offsets, n_rows):
        out = np.zeros((n_rows, grad_out.shape[1]), dtype=grad_out.dtype)
        for s in range(offsets.shape[0] - 1):
            for p in range(offsets[s], offsets[s + 1]):
                r = flat_idx[p]
                for j in range(grad_out.shape[1]):
                    out[r, j] += grad_out[s, j]
        return out

    @njit(cache=True, nogil=True)
    def _lcs_length_nb(a, b):
        n = a.shape[0]
        m = b.shape[0]
        prev = np.zeros(m + 1, dtype=np.int64)
        cur = np.zeros(m + 1, dtype=np.int64)
        for i in range(n):
            cur[0] = 0
            for j in range(m):
                if a[i] == b[j]:
                    cur[j + 1] = prev[j] + 1
                elif cur[j] > prev[j + 1]:
                    cur[j + 1] = cur[j]
                else:
                    cur[j + 1] = prev[j + 1]
            prev, cur = cur, prev
        return prev[m]

    @njit(cache=True, nogil=True)
    def _fnv1a_nb(data):
        h = np.uint32(2166136261)
        for i in range(data.shape[0]):
            b = np.int32(np.int8(data[i]))
            h = np.uint32(h ^ np.uint32(b))
            h = np.uint32(h * np.uint32(16777619))
        return h


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``out[idx[i]] += rows[i]`` with repeated indices accumulated. In place."""
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1)
    rows = np.ascontiguousarray(rows, dtype=out.dtype).reshape(idx.shape[0], -1)
    if USE_NUMBA:
        flat = out.reshape(out.shape[0], -1)
        _scatter_add_rows_nb(flat, idx, rows)
        return out
    flat = out.reshape(out.shape[0], -1)
    _scatter_add_rows_np(flat, idx, rows)
    return out


def segment_sum(table: np.ndarray, flat_idx: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Row sums of ``table`` over index segments ``flat_idx[offsets[s]:offsets[s+1]]``."""
    flat_idx = np.ascontiguousarray(flat_idx, dtype=np.int64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    table = np.ascontiguousarray(table)
    if USE_NUMBA:
        return _segment_sum_nb(table, flat_idx, offsets)
    return _segment_sum_np(table, flat_idx, offsets)


def segment_scatter(grad_out: np.ndarray, flat_idx: np.ndarray, offsets: np.ndarray,
                    n_rows: int) -> np.ndarray:
    """Adjoint of :func:`segment_sum` with respect to the table."""
    flat_idx = np.ascontiguousarray(flat_idx, dtype=np.int64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    grad_out = np.ascontiguousarray(grad_out)
    if USE_NUMBA:
        return _segment_scatter_nb(grad_out, flat_idx, offsets, n_rows)
    return _segment_scatter_np(grad_out, flat_idx, offsets, n_rows)


def lcs_length(a: np.ndarray, b: np.ndarray) -> int:
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    if USE_NUMBA:
        return int(_lcs_length_nb(a, b))
    return _lcs_length_np(a, b)


def fnv1a(text: str) -> int:
    """32-bit FNV-1a over UTF-8 bytes, fastText flavour (signed byte xor)."""
    data = np.frombuffer(text.encode("utf-8"), dtype=np.uint8)
    if USE_NUMBA:
        return int(_fnv1a_nb(data))
    return _fnv1a_np(data)


# raw kernels per path, for the cross-path tests and the benchmark
NUMPY_KERNELS = {
    "scatter_add_rows": _scatter_add_rows_np,
    "segment_sum": _segment_sum_np,
    "segment_scatter": _segment_scatter_np,
    "lcs_length": _lcs_length_np,
    "fnv1a": _fnv1a_np,
}
NUMBA_KERNELS = {
    "scatter_add_rows": _scatter_add_rows_nb,
    "segment_sum": _segment_sum_nb,
    "segment_scatter": _segment_scatter_nb,
    "lcs_length": _lcs_length_nb,
    "fnv1a": _fnv1a_nb,
} if USE_NUMBA else {}

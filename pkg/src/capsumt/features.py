"""Region feature files (FEAT, version 1).

Layout, little-endian: ``b"FEAT"``, u32 version, u32 k (regions), u32 D
(feature width), then k*D float32 values row-major.  Each row is the
concatenation of a detector feature and a localisation feature, produced
upstream.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"FEAT"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class FeatureFormatError(ValueError):
    pass


class BadMagicError(FeatureFormatError):
    pass


class BadVersionError(FeatureFormatError):
    pass


class TruncatedFeatureError(FeatureFormatError):
    pass


class NonFiniteFeatureError(FeatureFormatError):
    pass


@dataclass
class FeatureSet:
    """k region features of width D."""

    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features)
        if f.ndim != 2 or f.shape[0] < 1:
            raise ValueError(f"features must be (k >= 1, D), got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise NonFiniteFeatureError("features contain non-finite values")
        self.features = f

    @property
    def k(self) -> int:
        return self.features.shape[0]

    @property
    def D(self) -> int:
        return self.features.shape[1]


def write_features(path, features) -> None:
    f = np.asarray(features, dtype="<f4")
    if f.ndim != 2 or f.shape[0] < 1:
        raise ValueError(f"features must be (k >= 1, D), got {f.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, f.shape[0], f.shape[1]))
        fh.write(np.ascontiguousarray(f).tobytes())


def read_features(path) -> FeatureSet:
    """Load a FEAT file; values come back as float32 exactly as stored."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedFeatureError(
            f"{path}: expected at least {_HEADER.size} header bytes, got {len(raw)}")
    magic, version, k, D = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BadVersionError(f"{path}: unsupported FEAT version {version}")
    expected = _HEADER.size + 4 * k * D
    if len(raw) != expected:
        raise TruncatedFeatureError(f"{path}: expected {expected} bytes for k={k}, D={D}, "
                                    f"got {len(raw)}")
    if k < 1 or D < 1:
        raise FeatureFormatError(f"{path}: empty feature matrix k={k}, D={D}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(k, D).copy()
    if not np.all(np.isfinite(data)):
        raise NonFiniteFeatureError(f"{path}: non-finite feature values")
    return FeatureSet(data)

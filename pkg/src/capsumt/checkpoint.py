"""Binary model checkpoints (CKPT, version 1).

Layout, little-endian::

    b"CKPT"  u32 version
    u32 n + n bytes     model kind (UTF-8)
    u32 n + n bytes     config JSON (UTF-8)
    u64 seed  u64 epoch
    u32 tensor count, then per tensor:
        u32 n + n bytes name, u32 ndim, ndim * u32 dims, prod(dims) float32

The file must end exactly after the last tensor.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"CKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadCheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointLengthError(CheckpointError):
    pass


class KindMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict[str, np.ndarray]
    seed: int = 0
    epoch: int = 0


def _model_classes() -> dict:
    from .ftawe import FtaWE
    from .maa import MaaFic
    from .sfbialstm import StyledCaptioner
    from .unmhast import Summarizer
    return {c.kind: c for c in (FtaWE, MaaFic, StyledCaptioner, Summarizer)}


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    def blob(b: bytes) -> bytes:
        return struct.pack("<I", len(b)) + b

    out = [MAGIC, struct.pack("<I", VERSION), blob(ckpt.kind.encode()),
           blob(json.dumps(ckpt.config, sort_keys=True).encode()),
           struct.pack("<QQI", ckpt.seed, ckpt.epoch, len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        out += [blob(name.encode()), struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape), a.tobytes()]
    return b"".join(out)


class _Reader:
    def __init__(self, raw: bytes, where: str):
        self.raw, self.pos, self.where = raw, 0, where

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointLengthError(
                f"{self.where}: truncated reading {what}: expected {n} bytes at offset "
                f"{self.pos}, got {len(self.raw) - self.pos}")
        b = self.raw[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))

    def blob(self, what: str) -> bytes:
        (n,) = self.unpack("<I", what)
        return self.take(n, what)


def decode_checkpoint(raw: bytes, where: str = "<bytes>") -> Checkpoint:
    r = _Reader(raw, where)
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadCheckpointMagicError(f"{where}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    r.pos = 4
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointVersionError(f"{where}: unsupported checkpoint version {version}")
    kind = r.blob("kind").decode()
    try:
        config = json.loads(r.blob("config").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{where}: config is not valid JSON ({exc})") from exc
    seed, epoch, count = r.unpack("<QQI", "header")
    tensors = {}
    for i in range(count):
        name = r.blob(f"tensor {i} name").decode()
        (ndim,) = r.unpack("<I", f"tensor {name} rank")
        shape = r.unpack(f"<{ndim}I", f"tensor {name} shape")
        n = int(np.prod(shape, dtype=np.int64))
        data = r.take(4 * n, f"tensor {name} data")
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    if r.pos != len(raw):
        raise CheckpointLengthError(f"{where}: {len(raw) - r.pos} trailing bytes after last tensor")
    return Checkpoint(kind, config, tensors, seed, epoch)


def save_checkpoint(path, model, seed: Optional[int] = None, epoch: Optional[int] = None) -> None:
    """Write ``model`` (any of the four model classes) to ``path``."""
    if seed is None:
        seed = int(model.config.seed)
    if epoch is None:
        epoch = len(getattr(model, "history", []))
    ckpt = Checkpoint(model.kind, model.config_dict(), model.params.state_dict(), seed, epoch)
    Path(path).write_bytes(encode_checkpoint(ckpt))


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), str(path))


def load_checkpoint(path, kind: Optional[str] = None):
    """Rebuild the model stored at ``path``; ``kind`` guards against loading
    the wrong model type."""
    ckpt = read_checkpoint(path)
    if kind is not None and ckpt.kind != kind:
        raise KindMismatchError(f"{path}: checkpoint holds {ckpt.kind!r}, expected {kind!r}")
    classes = _model_classes()
    if ckpt.kind not in classes:
        raise KindMismatchError(f"{path}: unknown model kind {ckpt.kind!r}")
    model = classes[ckpt.kind].from_config_dict(ckpt.config)
    model.params.load_state_dict(ckpt.tensors)
    model.checkpoint_seed, model.checkpoint_epoch = ckpt.seed, ckpt.epoch
    return model

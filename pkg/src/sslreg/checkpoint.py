"""Versioned binary checkpoints with bit-exact round trips.

Layout (all integers little-endian uint32 unless noted):

    magic b"SSRG" | version | num_layers | num_heads | d_model | d_ff |
    max_len | vocab_size | dropout (float32) | dtype_bits | num_tensors
    then per tensor: name_len | name (utf-8) | rank | dims... | raw values

Raw values are the array bytes in little-endian order of the declared
precision, so save -> load reproduces every tensor bitwise.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import EncoderConfig, ModelParams

MAGIC = b"SSRG"
VERSION = 1

_U32 = struct.Struct("<I")
_F32 = struct.Struct("<f")


class CheckpointError(ValueError):
    """Unreadable, corrupt, or truncated checkpoint file."""


def _np_dtype(bits: int):
    if bits == 32:
        return np.dtype("<f4")
    if bits == 64:
        return np.dtype("<f8")
    raise CheckpointError(f"unsupported precision {bits} (expected 32 or 64)")


def save_checkpoint(path: str | Path, params: ModelParams) -> None:
    """Write atomically: a killed run never leaves a corrupt file behind."""
    cfg = params.config
    bits = params.dtype.itemsize * 8
    dtype = _np_dtype(bits)
    chunks = [MAGIC, _U32.pack(VERSION)]
    for value in (cfg.num_layers, cfg.num_heads, cfg.d_model, cfg.d_ff,
                  cfg.max_len, cfg.vocab_size):
        chunks.append(_U32.pack(value))
    chunks.append(_F32.pack(cfg.dropout))
    chunks.append(_U32.pack(bits))
    chunks.append(_U32.pack(len(params.tensors)))
    for name in sorted(params.tensors):
        data = np.ascontiguousarray(params.tensors[name].data, dtype=dtype)
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(data.ndim))
        for dim in data.shape:
            chunks.append(_U32.pack(dim))
        chunks.append(data.tobytes())

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint (needed {n} more bytes)")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def f32(self) -> float:
        return _F32.unpack(self.take(4))[0]


def load_checkpoint(path: str | Path) -> ModelParams:
    """Read a checkpoint, validating structure and tensor completeness."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    num_layers, num_heads, d_model, d_ff, max_len, vocab_size = (r.u32() for _ in range(6))
    dropout = r.f32()
    dtype = _np_dtype(r.u32())
    num_tensors = r.u32()

    tensors: dict[str, Tensor] = {}
    for _ in range(num_tensors):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(r.take(count * dtype.itemsize), dtype=dtype).reshape(shape).copy()
        tensors[name] = Tensor(data, name=name)
    if r.pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - r.pos} trailing bytes after last tensor")

    try:
        config = EncoderConfig(vocab_size=vocab_size, num_layers=num_layers,
                               num_heads=num_heads, d_model=d_model, d_ff=d_ff,
                               max_len=max_len, dropout=round(dropout, 6))
    except ValueError as exc:
        raise CheckpointError(f"{path}: invalid encoder configuration: {exc}") from None
    for required in ("head.cls.w2", "head.satp.w2", "tok_emb"):
        if required not in tensors:
            raise CheckpointError(f"{path}: missing tensor {required!r}")
    num_classes = tensors["head.cls.w2"].shape[1]
    num_aug_ops = tensors["head.satp.w2"].shape[1]

    params = ModelParams(config, num_classes, num_aug_ops, tensors)
    reference = ModelParams.init(config, num_classes, num_aug_ops,
                                 np.random.default_rng(0), dtype)
    expected = {n: t.shape for n, t in reference.tensors.items()}
    actual = {n: t.shape for n, t in tensors.items()}
    if expected != actual:
        missing = sorted(set(expected) - set(actual))
        extra = sorted(set(actual) - set(expected))
        wrong = sorted(n for n in set(expected) & set(actual) if expected[n] != actual[n])
        raise CheckpointError(
            f"{path}: tensor set mismatch (missing {missing}, extra {extra}, bad shape {wrong})"
        )
    return params

"""Binary checkpoint files: model config, vocab, and weights in one blob.

Layout, all integers little-endian:

    magic   8 bytes  b"SLMCKPT1"
    version u32      currently 1
    u64 length + UTF-8 JSON   {"model": ModelConfig fields, "meta": {...}}
    u64 length + UTF-8 JSON   vocab table
    raw float64 tensor data, declaration order, no per-tensor framing
    u64     FNV-1a 64 checksum of every byte above

Tensor shapes are derived from the config, so the reader knows exactly how
many bytes each tensor occupies."""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .hashing import fnv1a64
from .model import ModelConfig, Parameters, _shapes
from .tokenizer import Vocab, vocab_from_dict, vocab_to_dict

MAGIC = b"SLMCKPT1"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """File is not a checkpoint, is truncated, or fails validation."""


def save_checkpoint(path: str | Path, params: Parameters, vocab: Vocab,
                    meta: dict | None = None) -> int:
    """Write params+vocab to path; returns the payload checksum."""
    params.validate()
    if len(vocab) != params.config.vocab_size:
        raise CheckpointError("vocab size does not match model config")
    head = {"model": dataclasses.asdict(params.config), "meta": meta or {}}
    blocks = [MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for obj in (head, vocab_to_dict(vocab)):
        raw = json.dumps(obj, sort_keys=True).encode("utf-8")
        blocks.append(struct.pack("<Q", len(raw)))
        blocks.append(raw)
    for name in _shapes(params.config):
        blocks.append(np.ascontiguousarray(
            params[name], dtype="<f8").tobytes())
    payload = b"".join(blocks)
    checksum = fnv1a64(payload)
    Path(path).write_bytes(payload + struct.pack("<Q", checksum))
    return checksum


def _take(buf: bytes, offset: int, n: int) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise CheckpointError("truncated checkpoint")
    return buf[offset:offset + n], offset + n


def load_checkpoint(path: str | Path) -> tuple[Parameters, Vocab, dict]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 12 or not data.startswith(MAGIC):
        raise CheckpointError("bad magic; not a checkpoint file")
    payload, stored = data[:-8], data[-8:]
    if fnv1a64(payload) != struct.unpack("<Q", stored)[0]:
        raise CheckpointError("checksum mismatch; file corrupted")
    offset = len(MAGIC)
    raw, offset = _take(data, offset, 4)
    version = struct.unpack("<I", raw)[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    jsons = []
    for _ in range(2):
        raw, offset = _take(data, offset, 8)
        n = struct.unpack("<Q", raw)[0]
        raw, offset = _take(data, offset, n)
        jsons.append(json.loads(raw.decode("utf-8")))
    head, vocab_dict = jsons
    config = ModelConfig(**head["model"])
    vocab = vocab_from_dict(vocab_dict)
    if len(vocab) != config.vocab_size:
        raise CheckpointError("embedded vocab does not match model config")
    tensors = {}
    for name, shape in _shapes(config).items():
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 8
        raw, offset = _take(data, offset, n_bytes)
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if offset != len(payload):
        raise CheckpointError("trailing bytes after tensor data")
    params = Parameters(config, tensors)
    params.validate()
    return params, vocab, head.get("meta", {})


def stored_checksum(path: str | Path) -> int:
    """The checksum recorded in a checkpoint file, after validating it."""
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise CheckpointError("truncated checkpoint")
    stored = struct.unpack("<Q", data[-8:])[0]
    if fnv1a64(data[:-8]) != stored:
        raise CheckpointError("checksum mismatch; file corrupted")
    return stored

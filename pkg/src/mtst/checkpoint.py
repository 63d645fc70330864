"""Flat binary checkpoints.

Layout (all integers unsigned little-endian)::

    magic       8 bytes   b"MTSTCKPT"
    version     u32       1
    config_len  u64
    config      config_len bytes, UTF-8 JSON object with sorted keys
    n_tensors   u32
    n_tensors x:
        name_len u16, name (UTF-8)
        ndim     u8,  dims (u64 each)
        data     prod(dims) float64 little-endian, row-major

Tensors appear in parameter declaration order followed by the batch-norm
running statistics. The config object carries ``model`` (ModelConfig
fields) plus whatever run metadata the writer adds.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import MTST, ModelConfig

MAGIC = b"MTSTCKPT"
VERSION = 1


def to_bytes(model, meta=None):
    block = dict(meta or {})
    block["model"] = model.config.to_dict()
    block["seed"] = model.seed
    cfg = json.dumps(block, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(cfg)), cfg]
    state = model.params.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, arr in state.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save(path, model, meta=None):
    Path(path).write_bytes(to_bytes(model, meta))


def _take(buf, pos, n, path):
    if pos + n > len(buf):
        raise CheckpointError(f"{path}: truncated checkpoint at byte {pos}")
    return buf[pos: pos + n], pos + n


def from_bytes(buf, path="<bytes>"):
    """Decode a checkpoint into (model, config block)."""
    head, pos = _take(buf, 0, 8, path)
    if head != MAGIC:
        raise CheckpointError(f"{path}: not an mtst checkpoint (bad magic)")
    raw, pos = _take(buf, pos, 4, path)
    (version,) = struct.unpack("<I", raw)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    raw, pos = _take(buf, pos, 8, path)
    (n,) = struct.unpack("<Q", raw)
    raw, pos = _take(buf, pos, n, path)
    block = json.loads(raw.decode())
    raw, pos = _take(buf, pos, 4, path)
    (count,) = struct.unpack("<I", raw)
    state = {}
    for _ in range(count):
        raw, pos = _take(buf, pos, 2, path)
        (ln,) = struct.unpack("<H", raw)
        raw, pos = _take(buf, pos, ln, path)
        name = raw.decode()
        raw, pos = _take(buf, pos, 1, path)
        (ndim,) = struct.unpack("<B", raw)
        raw, pos = _take(buf, pos, 8 * ndim, path)
        shape = struct.unpack(f"<{ndim}Q", raw)
        size = int(np.prod(shape)) if ndim else 1
        raw, pos = _take(buf, pos, 8 * size, path)
        state[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    model = MTST(ModelConfig.from_dict(block["model"]), seed=block.get("seed", 0))
    expected = set(model.params.state_dict())
    if set(state) != expected:
        missing = sorted(expected - set(state))[:3]
        extra = sorted(set(state) - expected)[:3]
        raise CheckpointError(f"{path}: tensor set mismatch (missing {missing}, unexpected {extra})")
    model.params.load_state_dict(state)
    return model, block


def load(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes(), str(path))

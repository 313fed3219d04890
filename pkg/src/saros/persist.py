"""Deterministic checkpoint serialization.

A checkpoint is a binary matrix file plus a JSON sidecar (same path with
``.json`` appended).  Binary layout, all little-endian:

    bytes 0..6   magic  b"SAROSCK"
    byte  7      format version, currently b"1"
    bytes 8..31  n_users, n_items, k as three uint64
    then         n_users * k float64   (user embeddings, row-major)
    then         n_items * k float64   (item embeddings, row-major)

The sidecar carries the TrainConfig, the id maps and run metadata.
Round-tripping reproduces the matrices bitwise and the config exactly.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .core import DataError, ModelParams, TrainConfig

MAGIC = b"SAROSCK"
VERSION = b"1"


class CheckpointError(DataError):
    """The file is not a readable checkpoint of a supported version."""


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(params: ModelParams, config: TrainConfig, meta: dict, path) -> None:
    """Write the checkpoint and its sidecar atomically (temp + rename)."""
    path = Path(path)
    n, m, k = params.n_users, params.n_items, params.k
    blob = bytearray()
    blob += MAGIC + VERSION
    blob += struct.pack("<QQQ", n, m, k)
    blob += np.ascontiguousarray(params.user_embeddings, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(params.item_embeddings, dtype="<f8").tobytes()
    _atomic_write(path, bytes(blob))
    sidecar = {
        "format_version": 1,
        "n_users": n,
        "n_items": m,
        "k": k,
        "config": config.to_dict(),
        "seed": config.seed,
        **meta,
    }
    _atomic_write(sidecar_path(path), (json.dumps(sidecar, sort_keys=True, indent=1) + "\n").encode())


def _take(blob: bytes, offset: int, size: int, section: str):
    if offset + size > len(blob):
        raise CheckpointError(f"truncated checkpoint: {section} section incomplete")
    return blob[offset : offset + size], offset + size


def load_checkpoint(path):
    """Read (ModelParams, TrainConfig, meta) back from disk."""
    path = Path(path)
    blob = path.read_bytes()
    header, off = _take(blob, 0, 8, "magic")
    if header[:7] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    if header[7:8] != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header[7:8]!r}")
    dims, off = _take(blob, off, 24, "dimension header")
    n, m, k = struct.unpack("<QQQ", dims)
    user_bytes, off = _take(blob, off, n * k * 8, "user_embeddings")
    item_bytes, off = _take(blob, off, m * k * 8, "item_embeddings")
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes after item_embeddings")
    user = np.frombuffer(user_bytes, dtype="<f8").astype(np.float64).reshape(n, k)
    item = np.frombuffer(item_bytes, dtype="<f8").astype(np.float64).reshape(m, k)

    side = sidecar_path(path)
    if not side.exists():
        raise CheckpointError(f"{side}: checkpoint sidecar missing")
    meta = json.loads(side.read_text())
    config = TrainConfig.from_dict(meta.get("config", {}))
    return ModelParams(user, item), config, meta

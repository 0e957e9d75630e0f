"""Binary checkpoint container.

Layout: 8-byte magic, little-endian u32 format version, u64 manifest
length, UTF-8 JSON manifest, then each tensor as raw little-endian float64
in manifest order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .network import ModelConfig, SimilarityModel

MAGIC = b"SIMSCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


def checkpoint_bytes(model: SimilarityModel, extra: dict | None = None) -> bytes:
    names = sorted(model.params)
    manifest = {
        "config": model.config.to_dict(),
        "extra": extra or {},
        "tensors": [
            {
                "name": n,
                "shape": list(model.params[n].shape),
                "dtype": "<f8",
                "requires_grad": model.params[n].requires_grad,
            }
            for n in names
        ],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(model.params[n].data, dtype="<f8").tobytes() for n in names]
    return b"".join(parts)


def save_checkpoint(path, model: SimilarityModel, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model, extra))
    return path


def load_checkpoint(path) -> tuple[SimilarityModel, dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    try:
        manifest = json.loads(raw[offset : offset + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    offset += mlen
    config = ModelConfig.from_dict(manifest["config"])
    model = SimilarityModel(config)
    expected = set(model.params)
    seen = set()
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected:
            raise CheckpointError(f"{path}: tensor {name!r} not in model built from config")
        if shape != model.params[name].shape:
            raise CheckpointError(f"{path}: tensor {name!r} shape {shape} != {model.params[name].shape}")
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        model.params[name].data = data.astype(np.float64)
        model.params[name].requires_grad = bool(entry["requires_grad"])
        seen.add(name)
        offset = end
    if seen != expected:
        raise CheckpointError(f"{path}: missing tensors {sorted(expected - seen)}")
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return model, manifest["extra"]

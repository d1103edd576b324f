"""Flat named-tensor checkpoint files.

Layout (all integers little-endian):

    bytes 0..3    magic b"ATNT"
    bytes 4..7    format version, uint32 (currently 1)
    bytes 8..11   manifest length in bytes, uint32
    manifest      UTF-8 JSON: {"config": {...}, "tensors": [{"name", "shape"}...]}
    payload       float64 row-major values for each tensor, concatenated in
                  manifest order, little-endian

The manifest's "config" carries the model configuration fields plus any
extra metadata the writer wants alongside (entity vocabularies, seeds).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

MAGIC = b"ATNT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is malformed or inconsistent with its manifest."""


def checksum_arrays(arrays: dict[str, np.ndarray]) -> str:
    """Order-independent digest of named float64 buffers."""
    digest = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        digest.update(name.encode())
        digest.update(str(arr.shape).encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict) -> None:
    names = sorted(tensors)
    manifest = {
        "config": config,
        "tensors": [
            {"name": n, "shape": list(np.asarray(tensors[n]).shape)} for n in names
        ],
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, blob_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if len(raw) < 12 + blob_len:
        raise CheckpointError(f"{path}: truncated manifest")
    manifest = json.loads(raw[12:12 + blob_len].decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    offset = 12 + blob_len
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']}")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64)
        tensors[entry["name"]] = arr.reshape(shape)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return tensors, manifest["config"]


def save_model(path, model, extra: dict | None = None) -> None:
    """Write a model's parameters with its configuration as the manifest."""
    config = asdict(model.cfg)
    config["sites"] = list(model.cfg.sites)
    if extra:
        config.update(extra)
    save_checkpoint(path, model.snapshot(), config)


def load_model(path):
    """Rebuild a model from a checkpoint written by save_model."""
    from .layers import ModelConfig, SentimentModel

    tensors, config = load_checkpoint(path)
    fields = {k: config[k] for k in ModelConfig.__dataclass_fields__ if k in config}
    fields["sites"] = tuple(fields.get("sites", ()))
    model = SentimentModel(ModelConfig(**fields))
    model.load_snapshot(tensors)
    return model, config

"""Checkpoint files: JSON manifest header plus a float32 payload blob.

Layout: 8-byte magic, uint32 little-endian header length, UTF-8 JSON
header {"config": {...}, "manifest": [[name, shape, trainable, byte
offset], ...]}, then all parameter values as little-endian float32 in
manifest order. Save -> load -> save is byte-identical because values
are truncated to float32 on the way in and the header serialization is
deterministic.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import Config, config_from_dict, config_to_dict
from .model import TrackerModel

MAGIC = b"MTCKPT01"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, model: TrackerModel) -> None:
    manifest = []
    blobs = []
    offset = 0
    for p in model.store:
        raw = np.ascontiguousarray(p.value, dtype="<f4").tobytes()
        manifest.append([p.name, list(p.value.shape), bool(p.trainable), offset])
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"config": _jsonable(config_to_dict(model.cfg)), "manifest": manifest},
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def _jsonable(d: dict) -> dict:
    return {k: (v if not isinstance(v, (np.integer, np.floating)) else v.item())
            for k, v in d.items()}


def read_checkpoint(path: str | Path) -> tuple[Config, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12:12 + hlen].decode())
    payload = raw[12 + hlen:]
    cfg = config_from_dict(header["config"])
    values: dict[str, np.ndarray] = {}
    seen = set()
    for name, shape, _trainable, offset in header["manifest"]:
        if name in seen:
            raise CheckpointError(f"duplicate manifest name {name}")
        seen.add(name)
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        values[name] = arr.astype(np.float64).reshape(shape)
    return cfg, values


def load_model(path: str | Path) -> TrackerModel:
    cfg, values = read_checkpoint(path)
    model = TrackerModel(cfg)
    for p in model.store:
        if p.name not in values:
            raise CheckpointError(f"checkpoint missing parameter {p.name}")
        if list(values[p.name].shape) != list(p.value.shape):
            raise CheckpointError(f"shape mismatch for {p.name}")
        p.value[...] = values[p.name]
    return model

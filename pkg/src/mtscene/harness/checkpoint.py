"""Checkpoint file format.

Layout::

    b"MTSCKPT1"                      8-byte magic
    uint32 little-endian             header length in bytes
    header                           UTF-8 JSON, sorted keys
    payload                          float32 little-endian arrays, manifest order

The header holds ``format_version``, ``config`` (the full training config),
``manifest`` (a list of ``[name, shape]``) and free-form ``meta``.  Writing
is deterministic: the same parameters and config give identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..errors import CheckpointError
from ..model import ModelConfig, MultiTaskNet
from .config import TrainConfig, diff_dicts

MAGIC = b"MTSCKPT1"
FORMAT_VERSION = 1
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    config: TrainConfig
    arrays: Dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def build_model(self) -> MultiTaskNet:
        model = MultiTaskNet(self.config.model)
        load_parameters(model, self.arrays)
        return model


def encode(model: MultiTaskNet, config: TrainConfig, meta: Optional[dict] = None) -> bytes:
    named = list(model.named_parameters())
    header = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "manifest": [[name, list(t.shape)] for name, t in named],
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(t.data, dtype=_F32).tobytes() for _, t in named)
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def save(path, model: MultiTaskNet, config: TrainConfig, meta: Optional[dict] = None) -> None:
    data = encode(model, config, meta)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def decode(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(data) < 12 or data[:8] != MAGIC:
        raise CheckpointError(f"{source}: not an mtscene checkpoint")
    (n,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12 : 12 + n].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{source}: corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format version {header.get('format_version')}")
    try:
        config = TrainConfig.from_dict(header["config"])
    except Exception as exc:  # noqa: BLE001 - any config failure means an unusable checkpoint
        raise CheckpointError(f"{source}: stored config invalid: {exc}") from exc
    arrays: Dict[str, np.ndarray] = {}
    offset = 12 + n
    for name, shape in header["manifest"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * _F32.itemsize
        if end > len(data):
            raise CheckpointError(f"{source}: truncated payload at {name}")
        arrays[name] = np.frombuffer(data, dtype=_F32, count=count, offset=offset).reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{source}: {len(data) - offset} trailing bytes after payload")
    return Checkpoint(config, arrays, header.get("meta", {}))


def load(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(data, str(path))


def load_parameters(model: MultiTaskNet, arrays: Dict[str, np.ndarray]) -> None:
    named = dict(model.named_parameters())
    missing = sorted(set(named) - set(arrays))
    extra = sorted(set(arrays) - set(named))
    shapes = sorted(k for k in set(named) & set(arrays) if named[k].shape != arrays[k].shape)
    if missing or extra or shapes:
        parts = []
        if missing:
            parts.append(f"missing {missing[:5]}")
        if extra:
            parts.append(f"unexpected {extra[:5]}")
        if shapes:
            parts.append(f"shape mismatch {shapes[:5]}")
        raise CheckpointError("parameters do not fit the model: " + "; ".join(parts))
    for name, t in named.items():
        t.data[...] = arrays[name]


def check_compatible(ckpt: Checkpoint, config: TrainConfig) -> None:
    """Fail listing every model field on which a checkpoint and a config disagree."""
    diffs = diff_dicts(ckpt.config.model.to_dict(), config.model.to_dict(), "model.")
    a, b = ckpt.config.dataset.scene, config.dataset.scene
    if a.image_size != b.image_size:
        diffs.append("dataset.scene.image_size")
    if diffs:
        raise CheckpointError("checkpoint and config differ in: " + ", ".join(diffs))


def snapshot(model: MultiTaskNet) -> List[Tuple[str, np.ndarray]]:
    return [(n, t.data.copy()) for n, t in model.named_parameters()]

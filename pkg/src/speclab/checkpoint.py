"""Versioned binary model checkpoints.

Layout: magic "SFMD", u32 version, u32 length + canonical JSON config,
u32 tensor count, then each tensor as (u16 name length, name bytes,
u8 ndim, u32 dims..., little-endian float32 data) in declared order.
Round-trips are bit exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import ModelConfig, ModelState, tensor_shapes

MAGIC = b"SFMD"
VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg_blob = canonical_json(state.config.to_dict()).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(cfg_blob)))
        f.write(cfg_blob)
        names = list(tensor_shapes(state.config))
        f.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.ascontiguousarray(state.tensors[name], dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> ModelState:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ConfigError(f"{path}: not a model checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", f.read(4))
        config = ModelConfig.from_dict(json.loads(f.read(cfg_len).decode("utf-8")))
        (n_tensors,) = struct.unpack("<I", f.read(4))
        expected = tensor_shapes(config)
        if n_tensors != len(expected):
            raise ConfigError(f"{path}: tensor count mismatch")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            if name not in expected or expected[name] != shape:
                raise ConfigError(f"{path}: unexpected tensor {name} with shape {shape}")
            data = np.frombuffer(f.read(4 * int(np.prod(shape))), dtype="<f4")
            tensors[name] = data.reshape(shape).astype(np.float32)
    return ModelState(config=config, tensors=tensors)

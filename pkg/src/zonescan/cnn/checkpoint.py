"""``CNNCKPT1`` checkpoint files.

Layout (little-endian)::

    b"CNNCKPT1"  uint32 version  uint32 meta_len  meta (UTF-8 JSON)
    uint32 tensor_count
    per tensor: uint32 ndim, ndim x uint32 dims, float32 values (C order)

``meta`` holds the architecture descriptor, the input shape and any
training hyperparameters; it is written with sorted keys so identical
models produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptionError, FormatError
from ..scanio import atomic_write_bytes
from .model import CnnModel

MAGIC = b"CNNCKPT1"
VERSION = 1


def save_checkpoint(model: CnnModel, path, meta: dict | None = None) -> None:
    info = {"arch": list(model.arch), "input_shape": list(model.input_shape), "hyper": meta or {}}
    blob = json.dumps(info, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    params = model.parameters()
    parts.append(struct.pack("<I", len(params)))
    for _, p in params:
        parts.append(struct.pack("<I", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_checkpoint(path) -> tuple[CnnModel, dict]:
    """Return ``(model, hyperparameters)``; nothing is built unless the whole file parses."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise FormatError(f"{path}: not a {MAGIC.decode()} checkpoint")
    try:
        version, meta_len = struct.unpack_from("<II", data, 8)
        if version != VERSION:
            raise FormatError(f"{path}: checkpoint version {version}, expected {VERSION}")
        off = 16
        info = json.loads(data[off : off + meta_len].decode("utf-8"))
        off += meta_len
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        tensors = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            if off + 4 * n > len(data):
                raise CorruptionError(f"{path}: truncated tensor data")
            tensors.append(np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32))
            off += 4 * n
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: damaged checkpoint ({exc})") from exc
    model = CnnModel(info["arch"], info["input_shape"], init="zeros")
    model.set_parameters(tensors)
    return model, info.get("hyper", {})


def checkpoint_roundtrip(model: CnnModel, path) -> CnnModel:
    save_checkpoint(model, path)
    return load_checkpoint(path)[0]

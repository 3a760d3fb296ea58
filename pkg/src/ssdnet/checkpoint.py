"""Binary checkpoint codec.

Layout (little-endian): magic ``SSDN``, u32 version, u32 tensor count, then per
tensor u16 name length, UTF-8 name, u8 rank, u32 dims and float32 data.
Model hyperparameters live in a JSON sidecar next to the weights.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SSDN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray]):
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} cannot be encoded")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(out))


def load_tensors(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos, out = 12, {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", buf, pos)
            shape = struct.unpack_from(f"<{rank}I", buf, pos + 1)
            pos += 1 + 4 * rank
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(buf):
                raise CheckpointError(f"{path}: truncated data for {name!r}")
            out[name] = np.frombuffer(buf, "<f4", size // 4, pos).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_model(path, model, meta: dict | None = None):
    """Weights plus a JSON sidecar with ``meta`` (for example the model config)."""
    save_tensors(path, model.state_dict())
    if meta is not None:
        sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_meta(path) -> dict:
    p = sidecar(path)
    if not p.exists():
        raise CheckpointError(f"missing sidecar {p}")
    return json.loads(p.read_text())


def load_model(path, model, strict: bool = True):
    model.load_state_dict(load_tensors(path), strict=strict)
    return model

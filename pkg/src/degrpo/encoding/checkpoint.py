"""Versioned binary parameter container.

Layout (little-endian)::

    magic    b"PQCK"
    version  u32
    count    u32
    count x:
        name_len u32, name utf-8 bytes
        ndim     u32, dims u64 * ndim
        data     f64 * prod(dims), row-major

A sibling ``<path>.manifest.txt`` lists ``name<TAB>shape`` per entry.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"PQCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.txt")


def save_params(path, params: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    lines = []
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
        lines.append(f"{name}\t{'x'.join(map(str, arr.shape)) or 'scalar'}")
    path.write_bytes(b"".join(chunks))
    manifest_path(path).write_text(f"# checkpoint v{VERSION}\n" + "\n".join(lines) + "\n")


def load_params(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + n].decode("utf-8")
            off += n
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}Q", buf, off)
            off += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            flat = np.frombuffer(buf, dtype="<f8", count=size, offset=off)
            out[name] = np.reshape(flat, tuple(shape)).astype(np.float64)
            off += 8 * size
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return out


def save_model(path, model) -> None:
    save_params(path, {name: p.data for name, p in model.named_parameters().items()})


def load_model(path, model) -> None:
    values = load_params(path)
    params = model.named_parameters()
    missing = set(params) - set(values)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)}")
    for name, p in params.items():
        if values[name].shape != p.data.shape:
            raise CheckpointError(f"{name}: shape {values[name].shape} != expected {p.data.shape}")
        p.data[...] = values[name]

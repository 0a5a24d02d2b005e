"""Versioned binary checkpoint container.

Layout: 8-byte magic, little-endian u32 format version, u64 manifest length,
UTF-8 JSON manifest, then the concatenated little-endian array blobs the
manifest describes.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PGGANCK\x00"
FORMAT_VERSION = 1


class CheckpointVersionError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def _le(dtype: np.dtype) -> np.dtype:
    return np.dtype(dtype).newbyteorder("<")


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    blobs, entries, offset = [], [], 0
    for name, arr in ckpt.arrays.items():
        arr = np.ascontiguousarray(arr, dtype=_le(arr.dtype))
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"format_version": ckpt.format_version, "meta": ckpt.meta, "blobs": entries}, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", ckpt.format_version, len(manifest)))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointVersionError(f"{path}: not a checkpoint file")
    version, mlen = struct.unpack_from("<IQ", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = 8 + struct.calcsize("<IQ")
    manifest = json.loads(data[start : start + mlen])
    base = start + mlen
    arrays = {}
    for e in manifest["blobs"]:
        buf = data[base + e["offset"] : base + e["offset"] + e["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return Checkpoint(arrays, manifest["meta"], version)

"""Checkpoint container: JSON manifest followed by raw float32 arrays.

Layout::

    8 bytes   magic b"CSIDCKPT"
    8 bytes   manifest length, unsigned little-endian
    N bytes   UTF-8 JSON manifest (sorted keys, no whitespace)
    ...       array payloads, little-endian float32, C order

The manifest holds ``meta`` (free-form JSON) and ``tensors``, a list of
``{"name", "shape", "offset", "nbytes"}`` records; offsets count from the
first payload byte.  Writing the same arrays and meta twice yields identical
bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"CSIDCKPT"
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def _as_array(v) -> np.ndarray:
    data = getattr(v, "data", v)
    return np.ascontiguousarray(np.asarray(data), dtype=_DTYPE)


def dumps(arrays: Mapping[str, object], meta: Mapping | None = None) -> bytes:
    records = []
    payload = []
    offset = 0
    for name, value in sorted(arrays.items()):
        arr = _as_array(value)
        raw = arr.tobytes(order="C")
        records.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": dict(meta or {}), "tensors": records},
                          sort_keys=True, separators=(",", ":")).encode()
    return b"".join([MAGIC, struct.pack("<Q", len(manifest)), manifest, *payload])


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint container (bad magic)")
    if len(blob) < 16:
        raise CheckpointError("truncated checkpoint header")
    (mlen,) = struct.unpack("<Q", blob[8:16])
    start = 16 + mlen
    if len(blob) < start:
        raise CheckpointError("truncated checkpoint manifest")
    manifest = json.loads(blob[16:start].decode())
    arrays = {}
    for rec in manifest["tensors"]:
        lo = start + rec["offset"]
        hi = lo + rec["nbytes"]
        if hi > len(blob):
            raise CheckpointError(f"truncated payload for {rec['name']}")
        arr = np.frombuffer(blob[lo:hi], dtype=_DTYPE).reshape(rec["shape"])
        arrays[rec["name"]] = arr.astype(np.float32)
    return arrays, manifest["meta"]


def save(path, arrays: Mapping[str, object], meta: Mapping | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    return loads(p.read_bytes())

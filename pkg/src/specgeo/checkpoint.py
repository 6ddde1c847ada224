"""Binary parameter container.

Layout::

    b"S2G1"                      magic + format version
    uint64 (little endian)       manifest length in bytes
    manifest                     UTF-8 JSON: {"tensors": [{"name", "shape", "offset"}], "meta": {...}}
    payload                      little-endian float64 values; offsets are byte offsets into it
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"S2G1"


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    return MAGIC + struct.pack("<Q", len(manifest)) + manifest + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (size,) = struct.unpack("<Q", blob[4:12])
    manifest = json.loads(blob[12:12 + size].decode())
    payload = memoryview(blob)[12 + size:]
    out = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(payload[start:start + 8 * count], dtype="<f8")
        out[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return out, manifest.get("meta", {})


def save(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> str:
    """Write a checkpoint and return the sha256 of its bytes."""
    blob = dumps(tensors, meta)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

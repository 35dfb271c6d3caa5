"""Parameter checkpoints: a JSON manifest followed by little-endian float64 buffers.

Layout: 8-byte magic, 8-byte little-endian manifest length, the UTF-8 JSON
manifest, then the concatenated buffers at the offsets the manifest lists.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SGNCKPT1"


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    entries = []
    buffers = []
    offset = 0
    for name in sorted(arrays):
        buf = np.ascontiguousarray(arrays[name], dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arrays[name])), "offset": offset, "nbytes": len(buf)})
        buffers.append(buf)
        offset += len(buf)
    manifest = json.dumps({"tensors": entries, "meta": dict(meta or {})}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for buf in buffers:
            fh.write(buf)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (length,) = struct.unpack_from("<Q", raw, 8)
    manifest = json.loads(raw[16:16 + length].decode("utf-8"))
    base = 16 + length
    arrays = {}
    for e in manifest["tensors"]:
        start = base + e["offset"]
        data = np.frombuffer(raw, dtype="<f8", count=e["nbytes"] // 8, offset=start)
        arrays[e["name"]] = data.astype(np.float64).reshape(e["shape"])
    return arrays, manifest["meta"]

"""Parameter checkpoints: one JSON header line, then raw little-endian f64 buffers."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

VERSION = 1


def save(path, params: dict):
    """Write ``{name: array}`` in insertion order."""
    header = {
        "version": VERSION,
        "params": [{"name": name, "shape": list(np.shape(arr))} for name, arr in params.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load(path) -> dict:
    raw = Path(path).read_bytes()
    cut = raw.index(b"\n")
    header = json.loads(raw[:cut].decode("utf-8"))
    if header.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
    out, offset = {}, cut + 1
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if offset + nbytes > len(raw):
            raise ValueError(f"checkpoint truncated at parameter {entry['name']!r}")
        out[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise ValueError("trailing bytes after the last parameter buffer")
    return out

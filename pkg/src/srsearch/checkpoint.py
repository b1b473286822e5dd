"""Versioned named-tensor container used for policy and search checkpoints.

Layout (documented for readers in other languages):

    bytes 0..7    magic b"SRCKPT1\\n"
    bytes 8..11   uint32 little-endian header length N
    bytes 12..12+N-1  UTF-8 JSON header:
        {"version": 1,
         "meta": {...arbitrary JSON...},
         "tensors": [{"name": str, "shape": [int...], "dtype": "<f8",
                      "offset": int, "nbytes": int}, ...]}
    then the tensor payload: concatenated raw little-endian float64 buffers,
    offsets relative to the payload start, row-major order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"SRCKPT1\n"
VERSION = 1


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    buffers = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nbytes = arr.nbytes
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "<f8", "offset": offset, "nbytes": nbytes}
        )
        buffers.append(arr.tobytes())
        offset += nbytes
    header = json.dumps({"version": VERSION, "meta": meta or {}, "tensors": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        for buf in buffers:
            fh.write(buf)


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {magic!r})")
        header_len = int.from_bytes(fh.read(4), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
        payload = fh.read()
    tensors = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start : start + nbytes], dtype=entry["dtype"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return tensors, header["meta"]

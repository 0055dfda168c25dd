"""Versioned checkpoint container.

Layout: 8-byte magic ``MMCKPT01``, an 8-byte little-endian unsigned header
length, a UTF-8 JSON header, then the concatenated raw tensor payload.
The header holds ``{"tensors": [{name, shape, dtype, offset}...], "meta":
{...}}`` where offsets index into the payload and dtype is a numpy dtype
string (always ``<f8`` here: little-endian float64, C order). Any
implementation can reload the file from this description.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MMCKPT01"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    records = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        records.append(
            {"name": name, "shape": list(arr.shape), "dtype": "<f8", "offset": offset}
        )
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"tensors": records, "meta": meta}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    header_start = len(MAGIC) + 8
    header = json.loads(raw[header_start : header_start + header_len].decode("utf-8"))
    payload = raw[header_start + header_len :]
    tensors = {}
    for rec in header["tensors"]:
        arr = np.frombuffer(payload, dtype=rec["dtype"], count=int(np.prod(rec["shape"], dtype=int)),
                            offset=rec["offset"])
        tensors[rec["name"]] = arr.reshape(rec["shape"]).copy()
    return tensors, header["meta"]

"""Versioned checkpoint archives.

Single-file container: magic string, little-endian header length, a JSON
header (config echo plus an array manifest), then raw little-endian array
bytes in sorted name order. Writing the same state twice produces
byte-identical files, unlike zip-based formats that embed timestamps.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LASSR-CKPT-v1\n"


class CheckpointError(RuntimeError):
    """Raised for version mismatches or corrupt archives."""


def save_archive(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    names = sorted(arrays)
    manifest = []
    offset = 0
    blobs = []
    for name in names:
        src = np.asarray(arrays[name])
        arr = np.ascontiguousarray(src)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        manifest.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                # ascontiguousarray promotes 0-dim to (1,); keep the true shape
                "shape": list(src.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"meta": meta, "arrays": manifest}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_archive(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(
                f"{path}: bad or unsupported checkpoint magic {magic!r}, "
                f"expected {MAGIC!r}"
            )
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise CheckpointError(f"{path}: truncated header length")
        (header_len,) = struct.unpack("<Q", raw_len)
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len:
            raise CheckpointError(f"{path}: truncated header")
        try:
            header = json.loads(header_bytes)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: corrupt header JSON") from exc
        payload = fh.read()
    arrays = {}
    for item in header["arrays"]:
        start, n = item["offset"], item["nbytes"]
        if start + n > len(payload):
            raise CheckpointError(
                f"{path}: truncated archive, array {item['name']!r} out of range"
            )
        arr = np.frombuffer(payload[start : start + n], dtype=np.dtype(item["dtype"]))
        arrays[item["name"]] = arr.reshape(item["shape"]).copy()
    return header["meta"], arrays

"""Versioned binary container for checkpoints.

Layout: 8-byte magic, 4-byte little-endian header length, a JSON header
(sorted keys) describing config, metadata and the array manifest, then the
raw float64 bytes of every array in manifest order.  Byte-for-byte
deterministic for identical contents.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SIMTLAB\x01"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def write_container(path, kind: str, config: dict, meta: dict,
                    arrays: dict[str, np.ndarray]) -> None:
    manifest = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        manifest.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "kind": kind, "config": config,
         "meta": meta, "arrays": manifest},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def read_container(path, kind: str) -> tuple[dict, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    if len(raw) < start + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} "
            f"!= {FORMAT_VERSION}")
    if header.get("kind") != kind:
        raise CheckpointError(f"{path}: checkpoint kind {header.get('kind')!r}, "
                              f"expected {kind!r}")
    offset = start + header_len
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype=np.float64, count=int(np.prod(shape)), offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return header["config"], header["meta"], arrays

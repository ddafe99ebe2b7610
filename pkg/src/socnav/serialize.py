"""Versioned binary container for checkpoints and other array bundles.

Layout (little-endian throughout):

    bytes 0..3   magic b"SNAV"
    bytes 4..7   u32 container version (currently 1)
    bytes 8..11  u32 header length H
    bytes 12..   H bytes of UTF-8 JSON header
    ...          raw array payloads, C order, in header["blocks"] order

The JSON header carries arbitrary metadata plus
header["blocks"] = [{"name": str, "shape": [..], "dtype": "f8"|"i8"}, ...].
Round-trips are lossless: float64/int64 bytes are written verbatim.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"SNAV"
CONTAINER_VERSION = 1

_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


def write_blocks(path, meta: dict, blocks: list[tuple[str, np.ndarray]]) -> None:
    """Write metadata plus named arrays. Block order is preserved."""
    specs = []
    payloads = []
    for name, arr in blocks:
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float64:
            code = "f8"
        elif arr.dtype == np.int64:
            code = "i8"
        else:
            raise CheckpointError(f"block {name}: unsupported dtype {arr.dtype}")
        specs.append({"name": name, "shape": list(arr.shape), "dtype": code})
        payloads.append(arr.astype(_DTYPES[code], copy=False).tobytes("C"))
    header = dict(meta)
    header["blocks"] = specs
    raw = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", CONTAINER_VERSION, len(raw)))
        f.write(raw)
        for payload in payloads:
            f.write(payload)


def read_blocks(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container; returns (metadata, {name: array})."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a socnav container")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != CONTAINER_VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    offset = 12 + header_len
    arrays: dict[str, np.ndarray] = {}
    for spec in header.pop("blocks", []):
        dtype = _DTYPES.get(spec.get("dtype"))
        if dtype is None:
            raise CheckpointError(f"{path}: unknown block dtype {spec.get('dtype')}")
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated block {spec['name']}")
        arr = np.frombuffer(data[offset:offset + nbytes], dtype=dtype).copy()
        arrays[spec["name"]] = arr.reshape(spec["shape"])
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return header, arrays

"""Versioned binary container: a JSON header followed by raw little-endian arrays.

Layout::

    b"REDRE\\n"  magic
    uint32       format version
    uint64       header length in bytes
    header       UTF-8 JSON, keys sorted, no whitespace
    payload      arrays back to back in header order, C order

The encoding is canonical, so ``write(read(path))`` reproduces the file
byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"REDRE\n"
VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8", "u1": "|u1"}


class ContainerError(ValueError):
    pass


def _canonical(arr: np.ndarray) -> tuple[str, np.ndarray]:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        return "f8", np.ascontiguousarray(arr, dtype="<f8")
    if arr.dtype.kind in "iu" and arr.dtype != np.uint8:
        return "i8", np.ascontiguousarray(arr, dtype="<i8")
    if arr.dtype == np.uint8 or arr.dtype.kind == "b":
        return "u1", np.ascontiguousarray(arr, dtype="|u1")
    raise ContainerError(f"unsupported dtype {arr.dtype}")


def dumps(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries, blobs = [], []
    for name in sorted(arrays):
        code, arr = _canonical(arrays[name])
        blob = arr.tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape), "nbytes": len(blob)})
        blobs.append(blob)
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": entries},
        sort_keys=True, separators=(",", ":"), allow_nan=False,
    ).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<IQ", VERSION, len(header)), header, *blobs])


def loads(data: bytes, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    if not data.startswith(MAGIC):
        raise ContainerError("not a redre container (bad magic)")
    offset = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", data, offset)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    offset += struct.calcsize("<IQ")
    header = json.loads(data[offset:offset + hlen].decode("utf-8"))
    offset += hlen
    if kind is not None and header["kind"] != kind:
        raise ContainerError(f"expected a {kind!r} container, found {header['kind']!r}")
    arrays = {}
    for entry in header["arrays"]:
        n = entry["nbytes"]
        buf = data[offset:offset + n]
        if len(buf) != n:
            raise ContainerError(f"truncated payload for array {entry['name']!r}")
        arr = np.frombuffer(buf, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
        offset += n
    if offset != len(data):
        raise ContainerError("trailing bytes after payload")
    return header["meta"], arrays


def write(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(kind, meta, arrays))


def read(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes(), kind)

"""Versioned binary container used for checkpoints and gridded data.

Layout (all integers little-endian)::

    magic        8 bytes      e.g. b"CPTCHKPT" or b"CPTGRID1"
    version      uint32
    header_len   uint64
    header       header_len bytes of UTF-8 JSON
    blobs        raw array bytes, concatenated in header order
    crc32        uint32 over every preceding byte

The JSON header carries user metadata under ``"meta"`` and one descriptor per
array under ``"arrays"``: ``{"name", "dtype", "shape", "offset", "nbytes"}``.
``dtype`` is a numpy type string with explicit byte order (``"<f8"``), so a
file written on a big-endian machine decodes correctly everywhere. Writers in
this package always emit little-endian data.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .errors import CheckpointError

__all__ = ["write_container", "read_container"]

_PREFIX = struct.Struct("<8sIQ")


def _little_endian(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def write_container(path, magic: bytes, version: int, meta: dict, arrays: dict) -> None:
    """Write ``arrays`` and JSON-serialisable ``meta`` atomically to ``path``."""
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    descriptors = []
    blobs = []
    offset = 0
    for name, value in arrays.items():
        a = _little_endian(np.asarray(value))
        if a.dtype.kind not in "biuf":
            raise TypeError(f"array {name!r} has unsupported dtype {a.dtype}")
        dtype = a.dtype.str
        raw = a.tobytes(order="C")
        descriptors.append({"name": name, "dtype": dtype, "shape": list(a.shape),
                            "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": descriptors}, sort_keys=True).encode()
    body = _PREFIX.pack(magic, version, len(header)) + header + b"".join(blobs)
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(body)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_container(path, magic: bytes, version: int) -> tuple[dict, dict]:
    """Read a container, verifying magic, version and checksum.

    Returns
    -------
    meta : dict
    arrays : dict of ndarray, converted to native byte order

    Raises
    ------
    CheckpointError
        On any mismatch or corruption; nothing partial is returned.
    """
    try:
        with open(path, "rb") as fh:
            body = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if len(body) < _PREFIX.size + 4:
        raise CheckpointError(f"{path} is truncated")
    found_magic, found_version, header_len = _PREFIX.unpack_from(body)
    if found_magic != magic:
        raise CheckpointError(f"{path}: bad magic {found_magic!r}, expected {magic!r}")
    if found_version != version:
        raise CheckpointError(f"{path}: format version {found_version}, this reader expects {version}")
    (crc,) = struct.unpack_from("<I", body, len(body) - 4)
    if zlib.crc32(body[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    data = memoryview(body)[start + header_len:-4]
    arrays = {}
    for d in header["arrays"]:
        dtype = np.dtype(d["dtype"])
        if d["offset"] + d["nbytes"] > len(data):
            raise CheckpointError(f"{path}: array {d['name']!r} runs past the end of the file")
        a = np.frombuffer(data[d["offset"]:d["offset"] + d["nbytes"]], dtype=dtype)
        a = a.reshape(d["shape"]).astype(dtype.newbyteorder("="), copy=True)
        arrays[d["name"]] = a
    return header["meta"], arrays

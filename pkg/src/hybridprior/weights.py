"""Binary weight files.

Layout (little-endian)::

    b"HPGW" | u32 version | u32 header length | JSON header | f64 payloads | u32 CRC32

The header names the model kind, its architecture config, provenance, and
the ordered tensor manifest (name and shape of every payload).
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, TruncatedWeightFile, VersionMismatch, WeightFileError

MAGIC = b"HPGW"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def encode(kind: str, config: dict, tensors: dict[str, np.ndarray], provenance: dict | None = None) -> bytes:
    manifest = [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()]
    header = json.dumps({"kind": kind, "config": config, "provenance": provenance or {},
                         "tensors": manifest}, sort_keys=True, separators=(",", ":")).encode()
    body = [_PREFIX.pack(MAGIC, VERSION, len(header)), header]
    body += [np.ascontiguousarray(v, dtype="<f8").tobytes() for v in tensors.values()]
    blob = b"".join(body)
    return blob + struct.pack("<I", zlib.crc32(blob))


def decode(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a weight file; returns (header, tensors)."""
    if len(blob) < _PREFIX.size + 4:
        raise TruncatedWeightFile(f"file is only {len(blob)} bytes")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise WeightFileError(f"bad magic {magic!r}")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc:
        expected = _expected_length(blob, hlen)
        if expected is not None and expected != len(blob):
            raise TruncatedWeightFile(f"expected {expected} bytes, found {len(blob)}")
        raise ChecksumError("CRC32 mismatch")
    if version != VERSION:
        raise VersionMismatch(f"weight file version {version}, this reader supports {VERSION}")
    header = json.loads(blob[_PREFIX.size:_PREFIX.size + hlen])
    offset = _PREFIX.size + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64)
        tensors[entry["name"]] = arr.reshape(shape)
        offset += 8 * count
    return header, tensors


def _expected_length(blob: bytes, hlen: int) -> int | None:
    try:
        header = json.loads(blob[_PREFIX.size:_PREFIX.size + hlen])
        payload = sum(8 * int(np.prod(e["shape"], dtype=np.int64)) for e in header["tensors"])
    except (ValueError, KeyError, TypeError):
        return None
    return _PREFIX.size + hlen + payload + 4


def write(path, kind: str, config: dict, tensors: dict[str, np.ndarray], provenance: dict | None = None) -> None:
    Path(path).write_bytes(encode(kind, config, tensors, provenance))


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())

"""MCLP named-tensor archive.

Layout (all integers little-endian)::

    b"MCLP"  u8 version
    u32 metadata length, UTF-8 JSON metadata (sorted keys)
    u64 entry count
    per entry: u32 name length, UTF-8 name, u8 dtype code, u8 rank,
               rank × u64 dims, raw little-endian payload

Entries are written in mapping order, so identical inputs give identical bytes.
"""
import json
import struct
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from src.enums import DTypeCode
from src.types import FloatArray

MAGIC = b"MCLP"
FORMAT_VERSION = 1

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

_NUMPY_DTYPES = {DTypeCode.F32: np.dtype("<f4"), DTypeCode.F64: np.dtype("<f8")}


class ArchiveFormatError(ValueError):
    """Raised for bad magic, unknown versions, truncation or unknown dtypes."""


def _dtype_code(arr: np.ndarray) -> DTypeCode:
    if arr.dtype == np.float32:
        return DTypeCode.F32
    if arr.dtype == np.float64:
        return DTypeCode.F64
    raise ArchiveFormatError(f"unsupported dtype {arr.dtype}; archives hold f32 or f64")


def encode_archive(metadata: Mapping[str, Any], entries: Mapping[str, FloatArray]) -> bytes:
    meta = json.dumps(dict(metadata), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, _U8.pack(FORMAT_VERSION), _U32.pack(len(meta)), meta,
             _U64.pack(len(entries))]
    for name, value in entries.items():
        arr = np.asarray(value)
        code = _dtype_code(arr)
        encoded = name.encode("utf-8")
        parts += [_U32.pack(len(encoded)), encoded, _U8.pack(int(code)), _U8.pack(arr.ndim)]
        parts += [_U64.pack(dim) for dim in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype=_NUMPY_DTYPES[code]).tobytes())
    return b"".join(parts)


class ByteReader:
    """Sequential reader that raises ``error`` on truncation."""

    def __init__(self, buf: bytes, source: str, error: Optional[type] = None):
        self.buf = buf
        self.pos = 0
        self.source = source
        self.error = error or ArchiveFormatError

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise self.error(
                f"{self.source}: truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: struct.Struct) -> int:
        return fmt.unpack(self.take(fmt.size))[0]

    def text(self, length_fmt: struct.Struct = _U32) -> str:
        raw = self.take(self.unpack(length_fmt))
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise self.error(f"{self.source}: invalid UTF-8 at byte {self.pos}") from e

    def at_end(self) -> bool:
        return self.pos == len(self.buf)


def decode_archive(
    buf: bytes, source: str = "<bytes>"
) -> tuple[dict[str, Any], dict[str, FloatArray]]:
    cur = ByteReader(buf, source)
    magic = cur.take(len(MAGIC))
    if magic != MAGIC:
        raise ArchiveFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    version = cur.unpack(_U8)
    if version != FORMAT_VERSION:
        raise ArchiveFormatError(
            f"{source}: archive version {version} is not supported (reader is {FORMAT_VERSION})")
    try:
        metadata = json.loads(cur.take(cur.unpack(_U32)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveFormatError(f"{source}: unreadable metadata block: {e}") from e

    entries: dict[str, FloatArray] = {}
    for _ in range(cur.unpack(_U64)):
        name = cur.text()
        code = cur.unpack(_U8)
        if code not in _NUMPY_DTYPES:
            raise ArchiveFormatError(f"{source}: entry {name!r} has unknown dtype code {code}")
        dtype = _NUMPY_DTYPES[DTypeCode(code)]
        rank = cur.unpack(_U8)
        shape = tuple(cur.unpack(_U64) for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        payload = cur.take(count * dtype.itemsize)
        arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
        entries[name] = arr.astype(dtype.newbyteorder("="))
    if not cur.at_end():
        raise ArchiveFormatError(f"{source}: {len(buf) - cur.pos} trailing bytes")
    return metadata, entries


def write_archive(path: Union[str, Path], metadata: Mapping[str, Any],
                  entries: Mapping[str, FloatArray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_archive(metadata, entries))
    return path


def read_archive(path: Union[str, Path]) -> tuple[dict[str, Any], dict[str, FloatArray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Archive not found: {path}")
    return decode_archive(path.read_bytes(), source=str(path))

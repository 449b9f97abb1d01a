"""Versioned binary checkpoint container with per-section CRC.

Layout (little-endian): magic "SSCK", u32 version, u32 section count, then
per section: u16 name length, name bytes, u64 payload length, u32 CRC-32 of
the payload, payload. Payloads hold one recursively packed value supporting
None, bool, int, float, str, list, dict (string keys) and float64/int64
arrays. Loads parse and verify everything before returning, so a corrupt
file never yields a partial state. Writes go through a temp file and rename.
"""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np

__all__ = ["CheckpointError", "pack_value", "unpack_value", "save_sections", "load_sections"]

_MAGIC = b"SSCK"
_VERSION = 1

_T_NONE = b"N"
_T_FALSE = b"F"
_T_TRUE = b"T"
_T_INT = b"i"
_T_FLOAT = b"f"
_T_STR = b"s"
_T_LIST = b"L"
_T_DICT = b"D"
_T_ARRAY = b"A"

_DTYPES = {0: "<f8", 1: "<i8"}
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.int64): 1}


class CheckpointError(RuntimeError):
    """Unreadable or corrupt checkpoint."""


def pack_value(value) -> bytes:
    if value is None:
        return _T_NONE
    if isinstance(value, bool):
        return _T_TRUE if value else _T_FALSE
    if isinstance(value, (int, np.integer)):
        return _T_INT + struct.pack("<q", int(value))
    if isinstance(value, (float, np.floating)):
        return _T_FLOAT + struct.pack("<d", float(value))
    if isinstance(value, str):
        raw = value.encode("utf-8")
        return _T_STR + struct.pack("<Q", len(raw)) + raw
    if isinstance(value, (list, tuple)):
        parts = [_T_LIST, struct.pack("<Q", len(value))]
        parts.extend(pack_value(v) for v in value)
        return b"".join(parts)
    if isinstance(value, dict):
        parts = [_T_DICT, struct.pack("<Q", len(value))]
        for key in sorted(value):
            if not isinstance(key, str):
                raise CheckpointError(f"dict keys must be str, got {type(key).__name__}")
            parts.append(pack_value(key))
            parts.append(pack_value(value[key]))
        return b"".join(parts)
    if isinstance(value, np.ndarray):
        if value.dtype == np.float64:
            code = 0
        elif value.dtype == np.int64:
            code = 1
        else:
            raise CheckpointError(f"unsupported array dtype {value.dtype}")
        arr = np.ascontiguousarray(value)
        head = struct.pack("<BB", code, arr.ndim)
        dims = b"".join(struct.pack("<Q", s) for s in arr.shape)
        return _T_ARRAY + head + dims + arr.astype(_DTYPES[code]).tobytes()
    raise CheckpointError(f"cannot serialize {type(value).__name__}")


def _take(buf: bytes, off: int, n: int) -> tuple[bytes, int]:
    if off + n > len(buf):
        raise CheckpointError("truncated payload")
    return buf[off : off + n], off + n


def _unpack(buf: bytes, off: int):
    tag, off = _take(buf, off, 1)
    if tag == _T_NONE:
        return None, off
    if tag == _T_TRUE:
        return True, off
    if tag == _T_FALSE:
        return False, off
    if tag == _T_INT:
        raw, off = _take(buf, off, 8)
        return struct.unpack("<q", raw)[0], off
    if tag == _T_FLOAT:
        raw, off = _take(buf, off, 8)
        return struct.unpack("<d", raw)[0], off
    if tag == _T_STR:
        raw, off = _take(buf, off, 8)
        n = struct.unpack("<Q", raw)[0]
        raw, off = _take(buf, off, n)
        return raw.decode("utf-8"), off
    if tag == _T_LIST:
        raw, off = _take(buf, off, 8)
        n = struct.unpack("<Q", raw)[0]
        out = []
        for _ in range(n):
            item, off = _unpack(buf, off)
            out.append(item)
        return out, off
    if tag == _T_DICT:
        raw, off = _take(buf, off, 8)
        n = struct.unpack("<Q", raw)[0]
        out = {}
        for _ in range(n):
            key, off = _unpack(buf, off)
            val, off = _unpack(buf, off)
            out[key] = val
        return out, off
    if tag == _T_ARRAY:
        raw, off = _take(buf, off, 2)
        code, ndim = struct.unpack("<BB", raw)
        if code not in _DTYPES:
            raise CheckpointError(f"unknown array dtype code {code}")
        shape = []
        for _ in range(ndim):
            raw, off = _take(buf, off, 8)
            shape.append(struct.unpack("<Q", raw)[0])
        count = int(np.prod(shape)) if shape else 1
        raw, off = _take(buf, off, count * 8)
        arr = np.frombuffer(raw, dtype=_DTYPES[code]).reshape(shape).copy()
        return arr, off
    raise CheckpointError(f"unknown type tag {tag!r}")


def unpack_value(buf: bytes):
    value, off = _unpack(buf, 0)
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes in payload")
    return value


def save_sections(path: str, sections: dict[str, object]) -> None:
    """Atomically write named sections, each CRC-protected."""
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(sections))]
    for name in sorted(sections):
        payload = pack_value(sections[name])
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<QI", len(payload), zlib.crc32(payload)))
        parts.append(payload)
    blob = b"".join(parts)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_sections(path: str) -> dict[str, object]:
    """Read and verify every section; raises CheckpointError on any defect."""
    with open(path, "rb") as fh:
        buf = fh.read()
    raw, off = _take(buf, 0, 4)
    if raw != _MAGIC:
        raise CheckpointError(f"bad magic {raw!r}")
    raw, off = _take(buf, off, 8)
    version, count = struct.unpack("<II", raw)
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    sections: dict[str, object] = {}
    for _ in range(count):
        raw, off = _take(buf, off, 2)
        name_len = struct.unpack("<H", raw)[0]
        raw, off = _take(buf, off, name_len)
        name = raw.decode("utf-8")
        raw, off = _take(buf, off, 12)
        payload_len, crc = struct.unpack("<QI", raw)
        payload, off = _take(buf, off, payload_len)
        if zlib.crc32(payload) != crc:
            raise CheckpointError(f"CRC mismatch in section {name!r}")
        sections[name] = unpack_value(payload)
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes after sections")
    return sections

"""Versioned binary container used by the index files.

Layout: magic | u16 version | u32 header length | JSON header | payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

from .errors import DataError

_PREFIX = struct.Struct("<HI")


def write_blob(path, magic: bytes, version: int, header: dict, payload: bytes = b"") -> None:
    raw = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(magic)
        fh.write(_PREFIX.pack(version, len(raw)))
        fh.write(raw)
        fh.write(payload)


def read_magic(path, size: int) -> bytes:
    with Path(path).open("rb") as fh:
        return fh.read(size)


def read_blob(path, magic: bytes, version: int) -> tuple[dict, bytes]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such index file: {path}")
    data = path.read_bytes()
    if not data.startswith(magic):
        raise DataError(f"{path}: not a {magic.rstrip(bytes(1)).decode()} file (bad magic header)")
    off = len(magic)
    try:
        found, hlen = _PREFIX.unpack_from(data, off)
    except struct.error as exc:
        raise DataError(f"{path}: truncated header") from exc
    if found != version:
        raise DataError(f"{path}: unsupported format version {found} (expected {version})")
    off += _PREFIX.size
    try:
        header = json.loads(data[off : off + hlen].decode("utf-8"))
    except ValueError as exc:
        raise DataError(f"{path}: corrupt header") from exc
    return header, data[off + hlen :]

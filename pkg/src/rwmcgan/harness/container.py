"""The ``RWMC`` binary container used for checkpoints and classifier files.

Layout (all integers little-endian)::

    b"RWMC"  u32 version  u32 tensor_count
    repeated tensor_count times:
        u16 name_len  name (UTF-8)  u8 rank  rank * u32 extents
        float32 values, row-major
    u32 meta_len  meta (UTF-8 JSON: config, RNG state, counters)
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, LengthError, VersionError

MAGIC = b"RWMC"
VERSION = 1


def encode(tensors, meta):
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4", order="C")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf, source):
        self.buf = buf
        self.pos = 0
        self.source = source

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise LengthError(f"{self.source}: truncated at byte {self.pos} (need {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf, source="<bytes>"):
    """Parse container bytes into ``(tensors, meta)``."""
    r = _Reader(buf, source)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    r.take(4)
    version, count = r.unpack("<II")
    if version > VERSION:
        raise VersionError(f"{source}: container version {version} is newer than supported {VERSION}")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(shape)
        tensors[name] = data
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: unreadable metadata block: {exc}") from exc
    if r.pos != len(buf):
        raise LengthError(f"{source}: {len(buf) - r.pos} trailing bytes after metadata")
    return tensors, meta


def write(path, tensors, meta):
    """Write atomically (temp file + rename) so a crash never leaves half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(tensors, meta))
    os.replace(tmp, path)


def read(path):
    try:
        buf = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"checkpoint not found: {path}") from exc
    return decode(buf, str(path))

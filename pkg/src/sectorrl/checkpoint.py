"""Versioned binary checkpoint files.

Layout (all integers little-endian):

    magic            8 bytes  b"SRLCKPT1"
    version          u32      currently 1
    meta length      u32      followed by UTF-8 JSON metadata
    tensor count     u32
    per tensor:      u16 name length + UTF-8 name,
                     u8 ndim, ndim x u64 dims,
                     row-major float64 data
    checksum         u32      CRC-32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"SRLCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed, truncated, or corrupted checkpoint files."""


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(meta_blob)))
    chunks.append(meta_blob)
    chunks.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        blob = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(blob)))
        chunks.append(blob)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12:
        raise CheckpointError("file too short to be a checkpoint")
    body, (stored,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != stored:
        raise CheckpointError("checksum mismatch, checkpoint is corrupted")
    r = _Reader(body)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic bytes, not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        n_items = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * n_items), dtype="<f8").reshape(shape)
        arrays[name] = data.astype(np.float64)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after tensor records")
    return meta, arrays

"""Versioned binary checkpoints with CRC32 integrity.

Layout: magic ``SGCN`` | u32 LE version | u64-length-prefixed config JSON |
named sections | u32 LE CRC32 of everything before it. Each section is a
u64-length-prefixed UTF-8 name, a u8 dtype tag, a u32 rank, rank u64 dims,
and the raw little-endian payload.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"SGCN"
VERSION = 1

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1,
               np.dtype(np.int64): 2, np.dtype(np.uint8): 3}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def _pack_section(name: str, arr: np.ndarray) -> bytes:
    dtype = np.dtype(arr.dtype)
    if dtype not in _DTYPE_TAGS:
        raise CheckpointError(f"section {name!r} has unsupported dtype {dtype}")
    payload = np.ascontiguousarray(arr)
    if payload.dtype.byteorder == ">":
        payload = payload.astype(payload.dtype.newbyteorder("<"))
    raw = payload.tobytes()
    nb = name.encode("utf-8")
    head = struct.pack("<Q", len(nb)) + nb + struct.pack("<B", _DTYPE_TAGS[dtype])
    head += struct.pack("<I", arr.ndim) + b"".join(struct.pack("<Q", d) for d in arr.shape)
    return head + raw


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("corrupt checkpoint: truncated file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    @property
    def remaining(self) -> int:
        return len(self.blob) - self.pos


@dataclass
class CheckpointData:
    """Decoded checkpoint: config JSON plus named arrays, grouped by prefix."""

    config_json: str
    sections: dict[str, np.ndarray] = field(default_factory=dict)

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        plen = len(prefix)
        return {k[plen:]: v for k, v in self.sections.items() if k.startswith(prefix)}

    def json_section(self, name: str):
        if name not in self.sections:
            return None
        return json.loads(self.sections[name].tobytes().decode("utf-8"))


def json_array(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj).encode("utf-8"), dtype=np.uint8).copy()


def write_checkpoint(path, config_json: str, sections: dict[str, np.ndarray]) -> None:
    cfg = config_json.encode("utf-8")
    body = MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(cfg)) + cfg
    for name, arr in sections.items():
        body += _pack_section(name, arr)
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    Path(path).write_bytes(body)


def read_checkpoint(path) -> CheckpointData:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint")
    if len(blob) < len(MAGIC) + 4 + 4:
        raise CheckpointError("corrupt checkpoint: truncated file")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("corrupt checkpoint: CRC mismatch")
    r = _Reader(blob[:-4])
    r.take(len(MAGIC))
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    cfg = r.take(r.u64()).decode("utf-8")
    out = CheckpointData(config_json=cfg)
    while r.remaining:
        name = r.take(r.u64()).decode("utf-8")
        tag = r.u8()
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"corrupt checkpoint: unknown dtype tag {tag}")
        dtype = _TAG_DTYPES[tag]
        rank = r.u32()
        shape = tuple(r.u64() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        raw = r.take(count * dtype.itemsize)
        out.sections[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return out


def file_crc32(path) -> int:
    return zlib.crc32(Path(path).read_bytes()) & 0xFFFFFFFF

"""Binary checkpoint files for parameter and snapshot arrays.

Layout (all integers little-endian):

    magic    4 bytes  b"DILC"
    version  u32      currently 1
    count    u32      number of entries
    manifest, per entry:
        name_len  u16
        name      UTF-8 bytes
        ndim      u8
        dims      ndim x u32
    data, per entry in manifest order:
        row-major IEEE-754 float32 values

Values are stored as float32; loading widens back to float64, so a
save/load/save cycle is byte-identical.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import DataError

MAGIC = b"DILC"
VERSION = 1


def write_checkpoint(path: str | os.PathLike, entries: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(entries))]
    blobs = []
    for name, array in entries.items():
        arr = np.ascontiguousarray(array, dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise DataError(f"checkpoint entry name too long: {name!r}")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            chunks.append(struct.pack("<I", dim))
        blobs.append(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))
        fh.write(b"".join(blobs))


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise DataError(f"{self.path}: truncated checkpoint")
        chunk = self.blob[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Load a checkpoint; arrays come back as float64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, str(path))
    if r.take(4) != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    count = r.u32()
    manifest: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        name_len = r.u16()
        name = r.take(name_len).decode("utf-8")
        ndim = r.u8()
        shape = tuple(r.u32() for _ in range(ndim))
        manifest.append((name, shape))
    entries: dict[str, np.ndarray] = {}
    for name, shape in manifest:
        size = int(np.prod(shape)) if shape else 1
        raw = r.take(size * 4)
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
        entries[name] = arr.astype(np.float64)
    if r.offset != len(blob):
        raise DataError(f"{path}: trailing bytes after checkpoint payload")
    return entries

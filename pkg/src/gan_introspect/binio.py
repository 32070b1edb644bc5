"""Little-endian binary container helpers: length-prefixed strings, f64 blocks, CRC32 trailer."""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError


def pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def pack_blocks(blocks: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(blocks))]
    for name, arr in blocks.items():
        arr = np.asarray(arr, dtype="<f8")
        out.append(pack_str(name) + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated file")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("bad utf-8 string") from exc

    def blocks(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            name = self.string()
            (ndim,) = self.unpack("<B")
            shape = self.unpack(f"<{ndim}Q")
            size = int(np.prod(shape)) if ndim else 1
            out[name] = np.frombuffer(self.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        return out


def checked_payload(path, magic: bytes, version: int) -> _Reader:
    """Read a file, verify magic, version, and trailing CRC32; return a reader past the version."""
    buf = Path(path).read_bytes()
    if len(buf) < 12:
        raise FormatError(f"{path}: truncated file")
    if buf[:4] != magic:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise FormatError(f"{path}: checksum mismatch (corrupt or truncated)")
    (ver,) = struct.unpack("<I", buf[4:8])
    if ver != version:
        raise FormatError(f"{path}: unsupported version {ver}")
    r = _Reader(buf[:-4])
    r.pos = 8
    return r

# src/teg/codec.py
"""Little-endian reader shared by the TEGF feature and TEGW checkpoint formats."""
import struct

import numpy as np

from .errors import BadMagicError, TruncatedPayloadError, VersionMismatchError


class ByteReader:
    def __init__(self, data: bytes, what: str = "file"):
        self.data = memoryview(data)
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"{self.what}: truncated payload, wanted {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}"
            )
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def u8(self) -> int:
        return self.unpack("B")[0]

    def u32(self) -> int:
        return self.unpack("I")[0]

    def f64(self) -> float:
        return self.unpack("d")[0]

    def array(self, count: int, dtype: str) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(count * dt.itemsize), dtype=dt, count=count)

    def expect_magic(self, magic: bytes) -> None:
        got = self.take(len(magic)) if len(self.data) >= len(magic) else bytes(self.data)
        if got != magic:
            raise BadMagicError(f"{self.what}: bad magic {got!r}, expected {magic!r}")

    def expect_version(self, version: int) -> None:
        got = self.u32()
        if got != version:
            raise VersionMismatchError(f"{self.what}: format version {got}, this build reads {version}")

    def remaining(self) -> int:
        return len(self.data) - self.pos

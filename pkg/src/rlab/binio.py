"""Little-endian binary reading/writing helpers with offset-aware errors."""

import struct

import numpy as np

from .errors import FormatError


class Reader:
    """Sequential reader over an in-memory byte buffer."""

    def __init__(self, buf: bytes, what: str = "file"):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise FormatError(
                f"truncated {self.what}: expected at least {end} bytes, "
                f"file has {len(self.buf)}",
                offset=self.pos,
            )
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def magic(self, expected: bytes) -> None:
        got = self.take(len(expected))
        if got != expected:
            raise FormatError(
                f"bad magic {got!r} in {self.what}, expected {expected!r}", offset=0
            )

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def u8(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(count), dtype=np.uint8).copy()

    def text(self) -> str:
        n = self.u32()
        start = self.pos
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 in {self.what}", offset=start) from exc

    def finish(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(
                f"trailing data in {self.what}: expected {self.pos} bytes, "
                f"file has {len(self.buf)}",
                offset=self.pos,
            )


def pack_u32(value: int) -> bytes:
    return struct.pack("<I", value)


def pack_u64(value: int) -> bytes:
    return struct.pack("<Q", value)


def pack_text(value: str) -> bytes:
    raw = value.encode("utf-8")
    return pack_u32(len(raw)) + raw


def pack_f64(values) -> bytes:
    return np.ascontiguousarray(values, dtype="<f8").tobytes()

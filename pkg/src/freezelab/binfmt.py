"""Little-endian framing shared by checkpoint (FRZD) and dataset (FRZS) files."""
from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, MagicError, TruncatedError, VersionError

VERSION = 1


def encode_kv(values: dict) -> bytes:
    lines = []
    for key, value in values.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        text = str(value)
        if "\n" in text or "=" in key:
            raise FormatError(f"cannot encode config entry {key!r}")
        lines.append(f"{key}={text}\n")
    return "".join(lines).encode("utf-8")


def decode_kv(blob: bytes) -> dict:
    out = {}
    for line in blob.decode("utf-8").splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"malformed config line {line!r}")
        out[key] = value
    return out


class Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def raw(self, b: bytes):
        self.parts.append(b)

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u16(self, v):
        self.parts.append(struct.pack("<H", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def header(self, magic: bytes, version: int = VERSION):
        self.raw(magic)
        self.u32(version)

    def blob(self, b: bytes):
        self.u32(len(b))
        self.raw(b)

    def f64(self, arr: np.ndarray):
        self.raw(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def tensor(self, name: str, arr: np.ndarray):
        encoded = name.encode("utf-8")
        self.u16(len(encoded))
        self.raw(encoded)
        self.u8(arr.ndim)
        for d in arr.shape:
            self.u32(d)
        self.f64(arr)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, record: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise TruncatedError(record, f"needed {n} bytes, {len(self.data) - self.pos} left")
        out = self.data[self.pos:end]
        self.pos = end
        return out

    def u8(self, record):
        return struct.unpack("<B", self.take(1, record))[0]

    def u16(self, record):
        return struct.unpack("<H", self.take(2, record))[0]

    def u32(self, record):
        return struct.unpack("<I", self.take(4, record))[0]

    def header(self, magic: bytes, what: str) -> int:
        got = self.data[: len(magic)]
        if got != magic:
            raise MagicError(f"not a {what} file: magic {got!r}, expected {magic!r}")
        self.pos = len(magic)
        version = self.u32("version")
        if version != VERSION:
            raise VersionError(f"unsupported {what} version {version}")
        return version

    def blob(self, record) -> bytes:
        n = self.u32(record)
        return self.take(n, record)

    def f64(self, count: int, record: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * count, record), dtype="<f8").astype(np.float64)

    def tensor(self, index: int):
        n = self.u16(f"tensor #{index} name length")
        name = self.take(n, f"tensor #{index} name").decode("utf-8")
        rank = self.u8(f"tensor {name!r} rank")
        dims = tuple(self.u32(f"tensor {name!r} dims") for _ in range(rank))
        count = int(np.prod(dims)) if dims else 1
        data = self.f64(count, f"tensor {name!r} data").reshape(dims)
        return name, data

    def done(self) -> bool:
        return self.pos == len(self.data)

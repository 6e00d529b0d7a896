"""Binary weights file (``ADKD``) shared by backbones, DCAM and checkpoints.

Layout, all integers little-endian::

    b"ADKD" | u32 version | u32 count
    count x ( u16 name_len | name (UTF-8) | u8 rank | rank x u32 dim | f32 payload )
    [ b"ECHO" | u32 text_len | UTF-8 text ]      # checkpoints only
"""

from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"ADKD"
ECHO_MAGIC = b"ECHO"
VERSION = 1


class WeightsFormatError(ValueError):
    pass


class NamedTensorError(KeyError):
    """Tensor names or shapes in a file do not match the receiving model."""

    def __init__(self, missing=(), unexpected=(), mismatched=()):
        self.missing = sorted(missing)
        self.unexpected = sorted(unexpected)
        self.mismatched = sorted(mismatched)
        parts = []
        if self.missing:
            parts.append("missing: " + ", ".join(self.missing))
        if self.unexpected:
            parts.append("unexpected: " + ", ".join(self.unexpected))
        if self.mismatched:
            parts.append("shape mismatch: " + ", ".join(self.mismatched))
        super().__init__("; ".join(parts))

    def __str__(self) -> str:
        return self.args[0]


def encode(tensors: Mapping[str, np.ndarray], echo: str | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise WeightsFormatError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr)
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    if echo is not None:
        text = echo.encode("utf-8")
        buf.write(ECHO_MAGIC)
        buf.write(struct.pack("<I", len(text)))
        buf.write(text)
    return buf.getvalue()


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], str | None]:
    view = memoryview(blob)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise WeightsFormatError(f"truncated file reading {what} at byte {pos}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise WeightsFormatError("not an ADKD weights file (bad magic)")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise WeightsFormatError(f"unsupported weights format version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(nlen, "name")).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"rank of {name}"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name}"))
        size = int(np.prod(dims)) if rank else 1
        payload = take(4 * size, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    echo = None
    if pos < len(view):
        if bytes(take(4, "echo magic")) != ECHO_MAGIC:
            raise WeightsFormatError(f"unexpected trailing bytes at offset {pos - 4}")
        (tlen,) = struct.unpack("<I", take(4, "echo length"))
        echo = bytes(take(tlen, "echo text")).decode("utf-8")
        if pos != len(view):
            raise WeightsFormatError(f"unexpected trailing bytes at offset {pos}")
    return tensors, echo


def save(path: str | Path, tensors: Mapping[str, np.ndarray], echo: str | None = None) -> str:
    """Write ``tensors`` (in the given order) and return the SHA-256 of the file."""
    blob = encode(tensors, echo)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path: str | Path) -> tuple[dict[str, np.ndarray], str | None]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"weights file not found: {path}")
    return decode(path.read_bytes())


def check_names(expected: Mapping[str, tuple[int, ...]], found: Mapping[str, np.ndarray]) -> None:
    missing = set(expected) - set(found)
    unexpected = set(found) - set(expected)
    mismatched = [
        f"{k} {tuple(found[k].shape)} != {tuple(expected[k])}"
        for k in set(expected) & set(found)
        if tuple(found[k].shape) != tuple(expected[k])
    ]
    if missing or unexpected or mismatched:
        raise NamedTensorError(missing, unexpected, mismatched)

"""Binary PGM (P5) / PPM (P6) codecs, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PnmError(ValueError):
    pass


def _parse_header(blob: bytes) -> tuple[bytes, int, int, int, int]:
    """Return (magic, width, height, maxval, payload offset)."""
    pos = 0
    tokens: list[bytes] = []
    n = len(blob)
    while len(tokens) < 4:
        while pos < n and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < n and blob[pos:pos + 1] == b"#":
            while pos < n and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise PnmError(f"truncated header at byte {pos}")
        start = pos
        while pos < n and not blob[pos:pos + 1].isspace() and blob[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(blob[start:pos])
        if len(tokens) == 1 and tokens[0] not in (b"P5", b"P6"):
            raise PnmError(f"unsupported magic {tokens[0]!r} at byte {start}; expected P5 or P6")
    if pos >= n or not blob[pos:pos + 1].isspace():
        raise PnmError(f"missing whitespace after maxval at byte {pos}")
    pos += 1
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PnmError(f"non-numeric header field in {tokens[1:]!r}") from None
    if width < 1 or height < 1:
        raise PnmError(f"invalid size {width}x{height}")
    if maxval != 255:
        raise PnmError(f"unsupported maxval {maxval}; only 8-bit (255) images are accepted")
    return tokens[0], width, height, maxval, pos


def read_pnm(path: str | Path) -> np.ndarray:
    """Raw uint8 pixels: ``H x W`` for P5, ``H x W x 3`` for P6."""
    blob = Path(path).read_bytes()
    magic, width, height, _, offset = _parse_header(blob)
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    if len(blob) - offset < need:
        raise PnmError(f"{path}: truncated payload at byte {len(blob)}; expected {need} bytes from offset {offset}")
    data = np.frombuffer(blob, dtype=np.uint8, count=need, offset=offset)
    return data.reshape(height, width, channels) if channels == 3 else data.reshape(height, width)


def load_image(path: str | Path) -> np.ndarray:
    """``3 x H x W`` float32 in [0, 1]; grayscale is replicated to three channels."""
    px = read_pnm(path)
    if px.ndim == 2:
        px = np.repeat(px[:, :, None], 3, axis=2)
    return (px.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def load_mask(path: str | Path) -> np.ndarray:
    px = read_pnm(path)
    if px.ndim == 3:
        px = px.max(axis=2)
    return px > 127


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to uint8 with round-half-to-even."""
    if values.dtype == np.uint8:
        return values
    return np.rint(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_ppm(image: np.ndarray, path: str | Path) -> None:
    """Write a colour image given as ``3 x H x W`` floats or ``H x W x 3`` uint8."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = quantize(arr).transpose(1, 2, 0)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise PnmError(f"save_ppm expects three channels, got shape {arr.shape}")
    h, w, _ = arr.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes())


def save_pgm(image: np.ndarray, path: str | Path) -> None:
    """Write ``H x W`` data; booleans map to 0/255, floats are quantized from [0, 1]."""
    arr = np.asarray(image)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    elif arr.dtype != np.uint8:
        arr = quantize(arr)
    if arr.ndim != 2:
        raise PnmError(f"save_pgm expects a 2-D array, got shape {arr.shape}")
    h, w = arr.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes())

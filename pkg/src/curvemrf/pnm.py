"""Minimal binary PNM image I/O.

Reads and writes 8-bit binary PGM (P5, grayscale) and PPM (P6, RGB).
Writers emit a fixed canonical header so identical arrays always produce
byte-identical files.
"""

from __future__ import annotations

import numpy as np


class PnmError(ValueError):
    """Raised for malformed PNM data."""


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise PnmError("truncated header")
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        if data[pos:pos + 1] == b"#":
            break
        pos += 1
    return data[start:pos], pos


def _parse(data: bytes, magic: bytes, channels: int) -> np.ndarray:
    token, pos = _read_token(data, 0)
    if token != magic:
        raise PnmError(f"expected magic {magic!r}, got {token!r}")
    fields = []
    for _ in range(3):
        token, pos = _read_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError as exc:
            raise PnmError(f"non-numeric header field {token!r}") from exc
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PnmError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise PnmError(f"only maxval 255 is supported, got {maxval}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PnmError("missing whitespace after header")
    pos += 1
    count = width * height * channels
    raster = data[pos:pos + count]
    if len(raster) != count:
        raise PnmError(
            f"raster has {len(raster)} bytes, expected {count}"
        )
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, channels).copy()


def decode_pgm(data: bytes) -> np.ndarray:
    """Binary P5 bytes to a (h, w) uint8 array."""
    return _parse(data, b"P5", 1)


def decode_ppm(data: bytes) -> np.ndarray:
    """Binary P6 bytes to a (h, w, 3) uint8 array."""
    return _parse(data, b"P6", 3)


def encode_pgm(image: np.ndarray) -> bytes:
    """(h, w) uint8 array to canonical binary P5 bytes."""
    arr = np.ascontiguousarray(image, dtype=np.uint8)
    if arr.ndim != 2:
        raise PnmError(f"grayscale image must be 2-d, got shape {arr.shape}")
    h, w = arr.shape
    return b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes()


def encode_ppm(image: np.ndarray) -> bytes:
    """(h, w, 3) uint8 array to canonical binary P6 bytes."""
    arr = np.ascontiguousarray(image, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise PnmError(f"color image must be (h, w, 3), got {arr.shape}")
    h, w, _ = arr.shape
    return b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes()


def read_pnm(path) -> np.ndarray:
    """Load a P5 or P6 file by magic number."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"P5":
        return decode_pgm(data)
    if data[:2] == b"P6":
        return decode_ppm(data)
    raise PnmError(f"unsupported magic {data[:2]!r}")


def write_pnm(path, image: np.ndarray) -> None:
    """Save a 2-d array as P5 or a (h, w, 3) array as P6."""
    arr = np.asarray(image)
    payload = encode_pgm(arr) if arr.ndim == 2 else encode_ppm(arr)
    with open(path, "wb") as fh:
        fh.write(payload)

"""Binary PPM (P6) / PGM (P5) reading and writing.

Images are handled as float arrays in [0, 1], shaped ``(H, W)`` for
grayscale and ``(H, W, 3)`` for RGB.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

_MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}


class ImageFormatError(ValueError):
    pass


def _read_tokens(data: bytes, count: int, pos: int) -> tuple[list[bytes], int]:
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        tokens.append(data[start:pos])
    return tokens, pos


def decode_pnm(data: bytes, source: str = "<bytes>") -> np.ndarray:
    magic = data[:2]
    if magic not in _MAGIC_CHANNELS:
        raise ImageFormatError(
            f"{source}: unsupported image format (magic {magic!r}); only binary PPM (P6) and PGM (P5) are read"
        )
    channels = _MAGIC_CHANNELS[magic]
    try:
        (w, h, maxval), pos = _read_tokens(data, 3, 2)
        width, height, maxval = int(w), int(h), int(maxval)
    except (ImageFormatError, ValueError) as exc:
        raise ImageFormatError(f"{source}: malformed header ({exc})") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{source}: bad header values {width}x{height} maxval={maxval}")
    pos += 1  # single whitespace byte before the raster
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    expected = width * height * channels * dtype.itemsize
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise ImageFormatError(f"{source}: raster truncated ({len(raster)} of {expected} bytes)")
    pixels = np.frombuffer(raster, dtype=dtype).astype(np.float64) / maxval
    if channels == 1:
        return pixels.reshape(height, width)
    return pixels.reshape(height, width, 3)


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc.strerror or exc}") from exc
    return decode_pnm(data, str(path))


def encode_pnm(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode image of shape {image.shape}")
    height, width = image.shape[:2]
    raster = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = b"%s\n%d %d\n255\n" % (magic, width, height)
    return header + raster.tobytes()


def write_pnm(path: str | os.PathLike, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(image))

"""Binary PPM (P6, RGB) and PGM (P5, grey) images with 8-bit samples.

Images load as (1, C, H, W) arrays with values ``sample / 255``.  Writing
clamps to [0, 1], scales by 255 and rounds half to even.
"""
from __future__ import annotations

import numpy as np

from .tensor import FormatError, atomic_write

_CHANNELS = {b"P6": 3, b"P5": 1}
_WHITESPACE = b" \t\n\r\v\f"


class UnsupportedFormatError(FormatError):
    pass


def _header_fields(buf, count):
    """Parse ``count`` whitespace-separated ASCII integers after the magic.

    Returns the values and the offset of the first raster byte.
    """
    pos = 2
    values = []
    while len(values) < count:
        while pos < len(buf) and (buf[pos] in _WHITESPACE or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                end = buf.find(b"\n", pos)
                pos = len(buf) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(buf) and chr(buf[pos]).isdigit():
            pos += 1
        if start == pos:
            if pos >= len(buf):
                raise FormatError("header ends early", pos)
            raise FormatError(f"expected a decimal number, found {bytes([buf[pos]])!r}", pos)
        values.append((int(buf[start:pos]), start))
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise FormatError("header must end with a single whitespace byte", pos)
    return values, pos + 1


def decode_image(buf: bytes) -> np.ndarray:
    magic = bytes(buf[:2])
    if magic not in _CHANNELS:
        raise FormatError(f"not a binary PPM/PGM file (magic {magic!r})", 0)
    channels = _CHANNELS[magic]
    fields, start = _header_fields(buf, 3)
    (width, w_off), (height, h_off), (maxval, m_off) = fields
    if width < 1:
        raise FormatError("width must be positive", w_off)
    if height < 1:
        raise FormatError("height must be positive", h_off)
    if maxval != 255:
        raise UnsupportedFormatError(f"only maxval 255 is supported, got {maxval}", m_off)
    need = width * height * channels
    have = len(buf) - start
    if have < need:
        raise FormatError(f"raster needs {need} bytes, file has {have}", len(buf))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after raster", start + need)
    raster = np.frombuffer(buf, dtype=np.uint8, count=need, offset=start)
    img = raster.reshape(height, width, channels).transpose(2, 0, 1)[None]
    return img.astype(np.float64) / 255.0


def quantize(x) -> np.ndarray:
    """[0, 1] floats to uint8: clamp, scale, round half to even."""
    return np.rint(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_image(x) -> bytes:
    x = np.asarray(x)
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ValueError(f"can only encode a single image, got batch of {x.shape[0]}")
        x = x[0]
    if x.ndim != 3 or x.shape[0] not in (1, 3):
        raise ValueError(f"expected (C, H, W) with C in (1, 3), got {x.shape}")
    c, h, w = x.shape
    magic = b"P6" if c == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, w, h)
    return header + quantize(x).transpose(1, 2, 0).tobytes()


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def write_image(path, x) -> None:
    atomic_write(path, encode_image(x))

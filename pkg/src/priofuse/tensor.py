"""Dense feature-map substrate.

Feature maps are plain ``numpy.ndarray`` objects of rank 4, laid out as
``(batch, channels, height, width)`` in C order with dtype float32 or
float64.  :func:`feature_map` is the single validating entry point for
arrays that come from outside the library.

Also here: depthwise convolution, global average pooling, spatial
flattening, the seeded parameter generator and the binary tensor format.
"""
from __future__ import annotations

import os
import struct

import numpy as np

__all__ = [
    "FormatError",
    "ShapeError",
    "KernelError",
    "Prng",
    "feature_map",
    "depthwise_conv",
    "global_avg_pool",
    "flatten_spatial",
    "unflatten_spatial",
    "init_params",
    "fan_in_scale",
    "read_tensor",
    "write_tensor",
    "HEADER_SIZE",
]


class ShapeError(ValueError):
    """Array shapes are inconsistent with an operation's contract."""


class KernelError(ValueError):
    """Convolution kernel violates the odd-size requirement."""


class FormatError(ValueError):
    """Malformed binary input; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def feature_map(data, dtype=None) -> np.ndarray:
    """Validate ``data`` as a (B, C, H, W) feature map and return it as an array.

    Raises ShapeError for wrong rank or empty axes and ValueError for
    non-finite entries.
    """
    x = np.asarray(data)
    if dtype is not None:
        x = x.astype(dtype, copy=False)
    elif x.dtype not in _FLOAT_DTYPES:
        x = x.astype(np.float64)
    if x.dtype not in _FLOAT_DTYPES:
        raise TypeError(f"unsupported dtype {x.dtype}; expected float32 or float64")
    if x.ndim != 4:
        raise ShapeError(f"feature map must be rank 4 (B, C, H, W), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"all feature map axes must be >= 1, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature map contains NaN or Inf")
    return np.ascontiguousarray(x)


# ---------------------------------------------------------------------------
# Seeded generator
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(states: np.ndarray) -> np.ndarray:
    z = states.copy()
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


class Prng:
    """SplitMix64 stream (xorshift-multiply finalizer over a Weyl counter).

    Output ``k`` of a stream with seed ``s`` is ``mix(s + (k + 1) * golden)``
    in wrapping 64-bit arithmetic, so whole blocks are generated with
    vectorized integer ops and the stream is identical on every platform.
    Floats use the top 53 bits: ``u = (z >> 11) / 2**53`` in [0, 1).
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        k = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        return _splitmix64(np.uint64(self.seed) + k * _GOLDEN)

    def random(self, shape) -> np.ndarray:
        if isinstance(shape, (int, np.integer)):
            shape = (int(shape),)
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.next_u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) * 2.0**-53).reshape(shape)

    def uniform(self, shape, low=0.0, high=1.0) -> np.ndarray:
        return low + (high - low) * self.random(shape)

    def spawn(self, key: int) -> "Prng":
        """Independent child stream derived from this seed and ``key``."""
        mixed = _splitmix64(np.array([(self.seed ^ (int(key) * 0x632BE59BD9B4E019)) & _MASK64],
                                     dtype=np.uint64))
        return Prng(int(mixed[0]))


def init_params(prng: Prng, shape, scale: float, dtype=np.float64) -> np.ndarray:
    """Uniform draw from [-scale, scale]."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return prng.uniform(tuple(shape), -scale, scale).astype(dtype)


def fan_in_scale(fan_in: int) -> float:
    return 1.0 / np.sqrt(fan_in)


# ---------------------------------------------------------------------------
# Elementary ops
# ---------------------------------------------------------------------------

# elements per row strip in depthwise_conv (256 KiB of float64)
CONV_STRIP_ELEMENTS = 32768


def depthwise_conv(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel 2-D cross-correlation with zero padding (k - 1) / 2.

    ``x`` is (B, C, H, W), ``kernel`` is (C, k, k) with k odd.  The output
    has the same shape as ``x``.
    """
    kernel = np.asarray(kernel)
    if kernel.ndim != 3 or kernel.shape[1] != kernel.shape[2]:
        raise ShapeError(f"kernel must be (C, k, k), got {kernel.shape}")
    k = kernel.shape[1]
    if k % 2 == 0:
        raise KernelError(f"kernel size must be odd, got {k}")
    if x.ndim != 4 or x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"kernel has {kernel.shape[0]} channels, input shape is {x.shape}")
    b, c, h, w = x.shape
    r = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    kern = kernel.astype(x.dtype, copy=False)
    out = np.zeros_like(x)
    # row strips keep the k*k shifted products in cache on large maps;
    # every output element sees the same operations in the same order
    rows = max(1, CONV_STRIP_ELEMENTS // (b * c * (w + 2 * r)))
    for r0 in range(0, h, rows):
        r1 = min(h, r0 + rows)
        acc = out[:, :, r0:r1]
        for dy in range(k):
            for dx in range(k):
                acc += kern[None, :, dy, dx, None, None] * xp[:, :, r0 + dy:r1 + dy, dx:dx + w]
    return out


def global_avg_pool(xs) -> np.ndarray:
    """Mean of the inputs, then spatial mean; returns (B, C, 1, 1)."""
    xs = list(xs)
    if not xs:
        raise ShapeError("global_avg_pool needs at least one input")
    shape = xs[0].shape
    for other in xs[1:]:
        if other.shape != shape:
            raise ShapeError(f"shape mismatch in global_avg_pool: {shape} vs {other.shape}")
    stacked = np.mean(np.stack(xs), axis=0)
    return stacked.mean(axis=(2, 3), keepdims=True)


def flatten_spatial(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, H*W, C); token ``y*W + x`` holds pixel (y, x)."""
    b, c, h, w = x.shape
    return np.ascontiguousarray(x.reshape(b, c, h * w).transpose(0, 2, 1))


def unflatten_spatial(seq: np.ndarray, height: int, width: int) -> np.ndarray:
    """Inverse of :func:`flatten_spatial`."""
    b, t, c = seq.shape
    if t != height * width:
        raise ShapeError(f"sequence of {t} tokens cannot fill {height}x{width}")
    return np.ascontiguousarray(seq.transpose(0, 2, 1).reshape(b, c, height, width))


# ---------------------------------------------------------------------------
# Binary tensor format
# ---------------------------------------------------------------------------
#
#   offset  size  field
#   0       4     magic b"DEPF"
#   4       1     version (u8) = 1
#   5       1     dtype (u8): 0 = float32, 1 = float64
#   6       1     ndim (u8) = 4
#   7       16    dims B, C, H, W as little-endian u32
#   23      ...   B*C*H*W little-endian values, row-major

MAGIC = b"DEPF"
VERSION = 1
HEADER_SIZE = 23
_HEADER = struct.Struct("<4sBBB4I")
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_tensor(x: np.ndarray) -> bytes:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"tensor files hold rank-4 arrays, got shape {x.shape}")
    if x.dtype == np.float32:
        code = 0
    elif x.dtype == np.float64:
        code = 1
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    header = _HEADER.pack(MAGIC, VERSION, code, 4, *x.shape)
    return header + np.ascontiguousarray(x, dtype=_DTYPE_CODES[code]).tobytes()


def read_tensor(buf: bytes) -> np.ndarray:
    buf = bytes(buf)
    if len(buf) < 4:
        raise FormatError("truncated header", len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", 0)
    if len(buf) < HEADER_SIZE:
        raise FormatError("truncated header", len(buf))
    _, version, code, ndim, *dims = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if code not in _DTYPE_CODES:
        raise FormatError(f"unsupported dtype code {code}", 5)
    if ndim != 4:
        raise FormatError(f"unsupported ndim {ndim}", 6)
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64))
    need = HEADER_SIZE + count * dtype.itemsize
    if len(buf) < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(buf)}", len(buf))
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after payload", need)
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=HEADER_SIZE)
    return data.astype(dtype.newbyteorder("="), copy=True).reshape(dims)


def atomic_write(path, data: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)

"""Multi-level orthonormal 2-D discrete wavelet transform.

Per channel and per level the image is filtered along width, then along
height, with periodized orthonormal filter banks, so the analysis operator
is an orthogonal matrix: synthesis is its transpose, reconstruction is
exact and energy is preserved.

Band naming (fixed by hand on the 2x2 block [[1, 2], [3, 4]]):

====  ==================  ============================
band  width filter        height filter
====  ==================  ============================
LL    low                 low          -> 5
HL    high (horizontal)   low          -> -1
LH    low                 high (vert.) -> -2
HH    high                high         -> 0
====  ==================  ============================

The high-pass filter is ``hi[k] = (-1)**k * lo[L - 1 - k]`` so Haar detail
is ``(first - second) / sqrt(2)``.

Odd dimensions are padded by one sample of symmetric extension before each
level; the pre-padding size is kept in the pyramid and the inverse crops
back to it, which gives level-n bands of size ceil(H / 2**n).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .tensor import ShapeError, atomic_write, read_tensor, write_tensor


class Filters(NamedTuple):
    lo: np.ndarray
    hi: np.ndarray
    name: str = "custom"


def _qmf(lo):
    lo = np.asarray(lo, dtype=np.float64)
    signs = (-1.0) ** np.arange(len(lo))
    return signs * lo[::-1]


_S3 = np.sqrt(3.0)
_HAAR_LO = np.array([1.0, 1.0]) / np.sqrt(2.0)
# sym2 is the time reverse of db2.
_SYM2_LO = np.array([1.0 - _S3, 3.0 - _S3, 3.0 + _S3, 1.0 + _S3]) / (4.0 * np.sqrt(2.0))

BASES = {
    "haar": Filters(_HAAR_LO, _qmf(_HAAR_LO), "haar"),
    "sym2": Filters(_SYM2_LO, _qmf(_SYM2_LO), "sym2"),
}

DEFAULT_LEVELS = 2


def wavelet_filters(basis) -> Filters:
    if isinstance(basis, Filters):
        return basis
    try:
        return BASES[str(basis).lower()]
    except KeyError:
        raise ValueError(f"unknown wavelet basis {basis!r}; choose from {sorted(BASES)}") from None


@dataclass
class WaveletPyramid:
    """Coarsest LL band plus detail triples ordered deepest level first.

    ``sizes[j]`` is the (H, W) of the input to the level whose details are
    ``details[j]``, before any odd-size padding.
    """

    ll: np.ndarray
    details: list
    basis: str
    sizes: list = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.details)


def _analysis_last_axis(x, filt):
    n = x.shape[-1]
    half = n // 2
    base = 2 * np.arange(half)
    lo = np.zeros(x.shape[:-1] + (half,), dtype=x.dtype)
    hi = np.zeros_like(lo)
    for k in range(len(filt.lo)):
        taps = x[..., (base + k) % n]
        lo += filt.lo[k] * taps
        hi += filt.hi[k] * taps
    return lo, hi


def _synthesis_last_axis(lo, hi, filt):
    half = lo.shape[-1]
    n = 2 * half
    base = 2 * np.arange(half)
    out = np.zeros(lo.shape[:-1] + (n,), dtype=np.result_type(lo, hi))
    for k in range(len(filt.lo)):
        # indices (2m + k) mod n are distinct for fixed k, so += is safe
        out[..., (base + k) % n] += filt.lo[k] * lo + filt.hi[k] * hi
    return out


def _pad_even(x):
    ph = x.shape[-2] % 2
    pw = x.shape[-1] % 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="symmetric")
    return x


def dwt2_level(x, basis="haar"):
    """One analysis level; returns ``ll, (hl, lh, hh)``."""
    filt = wavelet_filters(basis)
    x = _pad_even(x)
    x_lo, x_hi = _analysis_last_axis(x, filt)
    ll, lh = _analysis_last_axis(x_lo.swapaxes(-1, -2), filt)
    hl, hh = _analysis_last_axis(x_hi.swapaxes(-1, -2), filt)
    return (ll.swapaxes(-1, -2), (hl.swapaxes(-1, -2), lh.swapaxes(-1, -2), hh.swapaxes(-1, -2)))


def idwt2_level(ll, details, size, basis="haar"):
    """Invert one level and crop to ``size`` = (H, W)."""
    filt = wavelet_filters(basis)
    hl, lh, hh = details
    for band in (hl, lh, hh):
        if band.shape != ll.shape:
            raise ShapeError(f"detail band {band.shape} does not match LL {ll.shape}")
    h, w = size
    if (h + 1) // 2 != ll.shape[-2] or (w + 1) // 2 != ll.shape[-1]:
        raise ShapeError(f"bands of size {ll.shape[-2:]} cannot reconstruct {size}")
    x_lo = _synthesis_last_axis(ll.swapaxes(-1, -2), lh.swapaxes(-1, -2), filt).swapaxes(-1, -2)
    x_hi = _synthesis_last_axis(hl.swapaxes(-1, -2), hh.swapaxes(-1, -2), filt).swapaxes(-1, -2)
    x = _synthesis_last_axis(x_lo, x_hi, filt)
    return np.ascontiguousarray(x[..., :h, :w])


def dwt2(x, levels=DEFAULT_LEVELS, basis="haar") -> WaveletPyramid:
    """N-level decomposition; recursion continues on LL only."""
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    h, w = x.shape[-2:]
    if min(h, w) < 2 ** levels:
        raise ValueError(f"{levels} levels is too deep for a {h}x{w} image")
    filt = wavelet_filters(basis)
    details, sizes = [], []
    ll = x
    for _ in range(levels):
        sizes.append(ll.shape[-2:])
        ll, triple = dwt2_level(ll, filt)
        details.append(triple)
    return WaveletPyramid(ll=ll, details=details[::-1], basis=filt.name, sizes=sizes[::-1])


def idwt2(pyr: WaveletPyramid, basis=None) -> np.ndarray:
    """Exact inverse of :func:`dwt2`.

    ``basis`` overrides the pyramid's basis name (needed for custom filters).
    """
    filt = wavelet_filters(basis if basis is not None else pyr.basis)
    if len(pyr.sizes) != len(pyr.details):
        raise ShapeError("pyramid sizes and details disagree in length")
    x = pyr.ll
    for triple, size in zip(pyr.details, pyr.sizes):
        x = idwt2_level(x, triple, size, filt)
    return x


_BAND_NAMES = ("hl", "lh", "hh")


def save_pyramid(pyr: WaveletPyramid, directory) -> None:
    """Write one tensor file per band plus ``manifest.json``."""
    os.makedirs(directory, exist_ok=True)
    bands = ["ll.depf"]
    atomic_write(os.path.join(directory, "ll.depf"), write_tensor(pyr.ll))
    for j, triple in enumerate(pyr.details):
        for name, band in zip(_BAND_NAMES, triple):
            fname = f"level{j}_{name}.depf"
            atomic_write(os.path.join(directory, fname), write_tensor(band))
            bands.append(fname)
    manifest = {
        "basis": pyr.basis,
        "levels": pyr.levels,
        "band_order": "ll, then per level deepest-first: hl, lh, hh",
        "bands": bands,
        "sizes": [list(map(int, s)) for s in pyr.sizes],
    }
    atomic_write(os.path.join(directory, "manifest.json"),
                 json.dumps(manifest, indent=2).encode())


def load_pyramid(directory) -> WaveletPyramid:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)

    def _read(name):
        with open(os.path.join(directory, name), "rb") as fh:
            return read_tensor(fh.read())

    ll = _read("ll.depf")
    details = []
    for j in range(manifest["levels"]):
        details.append(tuple(_read(f"level{j}_{name}.depf") for name in _BAND_NAMES))
    return WaveletPyramid(ll=ll, details=details, basis=manifest["basis"],
                          sizes=[tuple(s) for s in manifest["sizes"]])

"""Amplitude/phase decomposition of per-channel 2-D spectra.

Forward transform is unnormalized, inverse carries 1/(H*W).  Phase uses the
two-argument arctangent folded into (-pi, pi].  numpy's pocketfft handles
any H, W (mixed radix with a Bluestein fallback).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError


@dataclass
class SpectralPair:
    amplitude: np.ndarray
    phase: np.ndarray

    @property
    def size(self):
        return self.amplitude.shape[-2:]


def _fold_phase(phase):
    # np.angle can return exactly -pi (negative real axis with imag == -0.0)
    return np.where(phase <= -np.pi, phase + 2 * np.pi, phase)


def fft2_decompose(x: np.ndarray) -> SpectralPair:
    spectrum = np.fft.fft2(x, axes=(-2, -1))
    amplitude = np.abs(spectrum).astype(x.dtype, copy=False)
    phase = _fold_phase(np.arctan2(spectrum.imag, spectrum.real)).astype(x.dtype, copy=False)
    return SpectralPair(amplitude, phase)


def ifft2_recompose(s: SpectralPair, with_imag: bool = False):
    """Rebuild ``amplitude * exp(i * phase)``, invert, keep the real part.

    With ``with_imag=True`` also returns the largest discarded imaginary
    magnitude; it is nonzero whenever the spectrum was edited without
    keeping conjugate symmetry.
    """
    if s.amplitude.shape != s.phase.shape:
        raise ShapeError(f"amplitude {s.amplitude.shape} and phase {s.phase.shape} differ")
    spectrum = s.amplitude * np.exp(1j * s.phase.astype(np.float64))
    out = np.fft.ifft2(spectrum, axes=(-2, -1))
    real = out.real.astype(s.amplitude.dtype, copy=False)
    if with_imag:
        return real, float(np.max(np.abs(out.imag))) if out.size else 0.0
    return real

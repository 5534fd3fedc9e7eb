"""Wavelet/Fourier low-light enhancement and priority-ordered SSM fusion of RGB and IR features.

Subpackages and modules:

- ``tensor``: feature-map validation, seeded PRNG, depthwise conv, tensor files
- ``wavelet``, ``spectral``: multi-level 2-D DWT and FFT amplitude/phase
- ``ssm``: diagonal state-space scans, convolution kernels, decay analysis
- ``dde``: dual-domain enhancement (wavelet gating plus spectrum recovery)
- ``pgmf``: priority-guided serialization and fusion
- ``verify``: hand-derived gradients, losses and verification suites
"""
from .dde import dde_pipeline, identity_dde, init_dde
from .pgmf import FusionVariant, init_pgmf, pgmf_fuse
from .spectral import fft2_decompose, ifft2_recompose
from .ssm import StateSpaceSystem, conv_kernel, scan, verify_decay
from .tensor import Prng, read_tensor, write_tensor
from .wavelet import dwt2, idwt2

__version__ = "0.1.0"

__all__ = [
    "FusionVariant", "Prng", "StateSpaceSystem", "conv_kernel", "dde_pipeline", "dwt2",
    "fft2_decompose", "identity_dde", "idwt2", "ifft2_recompose", "init_dde", "init_pgmf",
    "pgmf_fuse", "read_tensor", "scan", "verify_decay", "write_tensor",
]

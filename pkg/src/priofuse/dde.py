"""Dual-domain low-light enhancement: wavelet-domain gating plus spectrum recovery.

``dde_pipeline`` decomposes the image with an N-level DWT, then walks from
the deepest level up.  At each level it

1. gates the current LL band with the cross-scale SSM block
   (``cswm_enhance``),
2. passes the level's detail bands through a per-channel affine map,
3. reconstructs one level,
4. runs Fourier details recovery (``fdr_recover``) on the result,

and the output becomes the LL band of the next shallower level.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import ssm as ssm_mod
from .layers import add_channel_bias, channel_layer_norm, pointwise_linear, relu
from .spectral import SpectralPair, fft2_decompose, ifft2_recompose
from .tensor import (Prng, ShapeError, depthwise_conv, fan_in_scale, flatten_spatial,
                     global_avg_pool, init_params, unflatten_spatial)
from .wavelet import DEFAULT_LEVELS, dwt2, idwt2_level

KERNEL_COMBINATIONS = ((3, 5, 7), (5, 7, 9), (3, 5, 9), (3, 7, 9))
DEFAULT_KERNELS = (3, 5, 7)
GATE_WARN = 1e3
# keeps the untrained gate within a few percent of 1
GATE_OUT_GAIN = 0.01
SRN_JITTER = 0.01


@dataclass
class CswmParams:
    kernel_sizes: tuple
    kernels: list        # one (C, k, k) per scale
    branches: list       # one BiSSMParams per scale
    hf_scale: np.ndarray  # (3, C) for hl, lh, hh
    hf_bias: np.ndarray

    def __post_init__(self):
        ks = tuple(int(k) for k in self.kernel_sizes)
        if any(k % 2 == 0 for k in ks) or list(ks) != sorted(set(ks)):
            raise ValueError(f"kernel sizes must be odd and strictly increasing, got {ks}")
        self.kernel_sizes = ks


@dataclass
class SrnParams:
    """Two depthwise convs with a ReLU between, LayerNorm, pointwise Linear.

    ``rectify`` and ``normalize`` switch the ReLU and the LayerNorm; with
    both off, unit centre taps and an identity Linear the network is the
    identity.
    """

    k1: np.ndarray
    b1: np.ndarray
    k2: np.ndarray
    b2: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    weight: np.ndarray
    bias: np.ndarray
    rectify: bool = True
    normalize: bool = True


@dataclass
class LevelParams:
    cswm: CswmParams
    srn_amp: SrnParams
    srn_phase: SrnParams


@dataclass
class DdeParams:
    levels: list          # LevelParams, deepest level first
    basis: str = "haar"

    @property
    def n_levels(self) -> int:
        return len(self.levels)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def _centre_kernel(channels, k, value=1.0):
    kern = np.zeros((channels, k, k))
    kern[:, k // 2, k // 2] = value
    return kern


def identity_srn(channels, kernel_size=3) -> SrnParams:
    return SrnParams(k1=_centre_kernel(channels, kernel_size), b1=np.zeros(channels),
                     k2=_centre_kernel(channels, kernel_size), b2=np.zeros(channels),
                     ln_gain=np.ones(channels), ln_bias=np.zeros(channels),
                     weight=np.eye(channels), bias=np.zeros(channels),
                     rectify=False, normalize=False)


def init_srn(prng: Prng, channels, kernel_size=3, jitter=SRN_JITTER, rectify=False,
             normalize=False) -> SrnParams:
    """Identity SRN plus uniform jitter on every weight."""
    p = identity_srn(channels, kernel_size)
    for name in ("k1", "k2", "weight"):
        arr = getattr(p, name)
        setattr(p, name, arr + init_params(prng, arr.shape, jitter))
    p.rectify = rectify
    p.normalize = normalize
    return p


def unit_branch(channels, state_dim, value, prng=None, discretization=ssm_mod.ZOH):
    """BiSSM whose output is the constant ``value`` for every token."""
    branch = ssm_mod.init_bi_ssm(prng or Prng(0), channels, state_dim, discretization)
    branch.w_out = np.zeros((channels, channels))
    branch.b_out = np.full(channels, float(value))
    return branch


def init_cswm(prng: Prng, channels, kernel_sizes=DEFAULT_KERNELS, state_dim=4,
              discretization=ssm_mod.ZOH) -> CswmParams:
    kernels = [init_params(prng, (channels, k, k), fan_in_scale(k * k)) for k in kernel_sizes]
    # out bias 1/len keeps the summed gate centred on 1
    share = 1.0 / len(kernel_sizes)
    branches = [ssm_mod.init_bi_ssm(prng, channels, state_dim, discretization, out_bias=share,
                                    out_gain=GATE_OUT_GAIN)
                for _ in kernel_sizes]
    return CswmParams(kernel_sizes=tuple(kernel_sizes), kernels=kernels, branches=branches,
                      hf_scale=np.ones((3, channels)), hf_bias=np.zeros((3, channels)))


def identity_cswm(channels, kernel_sizes=DEFAULT_KERNELS, state_dim=4, gate=1.0,
                  prng=None) -> CswmParams:
    """Gate fixed at ``gate``: every branch outputs ``gate / n_scales``."""
    prng = prng or Prng(0)
    kernels = [init_params(prng, (channels, k, k), fan_in_scale(k * k)) for k in kernel_sizes]
    share = gate / len(kernel_sizes)
    branches = [unit_branch(channels, state_dim, share, prng) for _ in kernel_sizes]
    return CswmParams(kernel_sizes=tuple(kernel_sizes), kernels=kernels, branches=branches,
                      hf_scale=np.ones((3, channels)), hf_bias=np.zeros((3, channels)))


def init_dde(prng: Prng, channels, levels=DEFAULT_LEVELS, kernel_sizes=DEFAULT_KERNELS,
             basis="haar", state_dim=4, discretization=ssm_mod.ZOH) -> DdeParams:
    out = []
    for _ in range(levels):
        out.append(LevelParams(
            cswm=init_cswm(prng, channels, kernel_sizes, state_dim, discretization),
            srn_amp=init_srn(prng, channels, rectify=True),
            srn_phase=init_srn(prng, channels),
        ))
    return DdeParams(levels=out, basis=basis)


def identity_dde(channels, levels=DEFAULT_LEVELS, kernel_sizes=DEFAULT_KERNELS, basis="haar",
                 state_dim=4, gate=1.0) -> DdeParams:
    prng = Prng(0)
    out = [LevelParams(cswm=identity_cswm(channels, kernel_sizes, state_dim, gate, prng),
                       srn_amp=identity_srn(channels), srn_phase=identity_srn(channels))
           for _ in range(levels)]
    return DdeParams(levels=out, basis=basis)


# ---------------------------------------------------------------------------
# CSWM
# ---------------------------------------------------------------------------

def cross_scale_serialize(*features, fg):
    """One bidirectional sequence (B, 2HW, C) per scale feature.

    Each scale is flattened row-major, the pooled global feature ``fg``
    (B, C, 1, 1) is added to every token, and the result is followed by its
    own reversal.
    """
    if fg.shape[2:] != (1, 1):
        raise ShapeError(f"global feature must be (B, C, 1, 1), got {fg.shape}")
    shape = features[0].shape
    seqs = []
    for f in features:
        if f.shape != shape:
            raise ShapeError(f"scale features differ in shape: {shape} vs {f.shape}")
        cross = flatten_spatial(f) + fg[:, :, 0, 0][:, None, :]
        seqs.append(np.concatenate([cross, cross[:, ::-1]], axis=1))
    return seqs


def fold_bidirectional(y):
    """(B, 2N, C) -> (B, N, C): average the first half with the re-reversed second."""
    n = y.shape[1] // 2
    return 0.5 * (y[:, :n] + y[:, n:][:, ::-1])


def cswm_gate(ll, params: CswmParams):
    """Sum over scales of the folded SSM outputs, shaped like ``ll``."""
    b, c, h, w = ll.shape
    feats = [depthwise_conv(ll, k) for k in params.kernels]
    fg = global_avg_pool(feats)
    gate = None
    for seq, branch in zip(cross_scale_serialize(*feats, fg=fg), params.branches):
        part = fold_bidirectional(ssm_mod.bi_ssm(branch, seq))
        gate = part if gate is None else gate + part
    gate = unflatten_spatial(gate, h, w)
    peak = float(np.max(np.abs(gate)))
    if peak > GATE_WARN:
        warnings.warn(f"CSWM gate magnitude {peak:.3g} exceeds {GATE_WARN:g}", RuntimeWarning)
    return gate


def cswm_enhance(ll, params: CswmParams, gate=None):
    """``ll * gate``; pass a precomputed ``gate`` to hold it fixed."""
    if gate is None:
        gate = cswm_gate(ll, params)
    return ll * gate


def hf_affine(details, params: CswmParams):
    return tuple(band * params.hf_scale[j].astype(band.dtype)[None, :, None, None]
                 + params.hf_bias[j].astype(band.dtype)[None, :, None, None]
                 for j, band in enumerate(details))


# ---------------------------------------------------------------------------
# FDR
# ---------------------------------------------------------------------------

def srn(x, params: SrnParams):
    h = add_channel_bias(depthwise_conv(x, params.k1), params.b1)
    if params.rectify:
        h = relu(h)
    h = add_channel_bias(depthwise_conv(h, params.k2), params.b2)
    if params.normalize:
        h = channel_layer_norm(h, params.ln_gain, params.ln_bias)
    return pointwise_linear(h, params.weight, params.bias)


def fdr_recover(x, srn_amp: SrnParams, srn_phase: SrnParams):
    pair = fft2_decompose(x)
    enhanced = SpectralPair(srn(pair.amplitude, srn_amp), srn(pair.phase, srn_phase))
    return ifft2_recompose(enhanced).astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def dde_pipeline(image, params: DdeParams):
    pyr = dwt2(image, params.n_levels, params.basis)
    current = pyr.ll
    for level, triple, size in zip(params.levels, pyr.details, pyr.sizes):
        ll_e = cswm_enhance(current, level.cswm)
        rec = idwt2_level(ll_e, hf_affine(triple, level.cswm), size, params.basis)
        current = fdr_recover(rec, level.srn_amp, level.srn_phase)
    return current.astype(image.dtype, copy=False)

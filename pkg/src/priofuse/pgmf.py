"""Priority-guided state-space fusion of RGB and IR feature maps.

Pipeline for one pair of (B, C, H, W) maps::

    F_vl, F_il   = Ref(F_v), Ref(F_i)          latent projection
    PMat         = PSN(F_vl - F_il)
    scores_m     = channel mean of (F_ml + PMat)   one scalar per token
    Seq_m        = tokens of F_ml sorted by descending score
    Seq          = fusion sequence of Seq_v, Seq_i (variant a-d), length 2HW
    halves       = bidirectional SSM over Seq, split and put back in priority order
    F_p          = Dropout(unsort_v(half_v) + unsort_i(half_i))
    F_fus        = F_v + F_i + F_p

Sorting is stable and descending; ties keep ascending spatial index, so a
constant score map degrades to plain row-major order.
"""
from __future__ import annotations

import copy
import gc
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import ssm as ssm_mod
from .layers import add_channel_bias, channel_layer_norm, pointwise_linear, silu
from .tensor import (Prng, ShapeError, depthwise_conv, fan_in_scale, flatten_spatial,
                     init_params, unflatten_spatial)


class FusionVariant(str, Enum):
    """Layout of the 2HW fusion sequence; ``rev`` reverses token order."""

    A = "a"  # rev(v) + i
    B = "b"  # v + i
    C = "c"  # rev(v) + rev(i)
    D = "d"  # v + rev(i)

    @property
    def reverse_v(self) -> bool:
        return self in (FusionVariant.A, FusionVariant.C)

    @property
    def reverse_i(self) -> bool:
        return self in (FusionVariant.C, FusionVariant.D)


DEFAULT_VARIANT = FusionVariant.D


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class LatentParams:
    weight: np.ndarray  # (C, C)
    bias: np.ndarray    # (C,)
    activation: bool = True

    @classmethod
    def identity(cls, channels):
        return cls(np.eye(channels), np.zeros(channels), activation=False)


@dataclass
class PsnParams:
    kernels: list        # three (C, k, k)
    conv_biases: list    # three (C,)
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    weight: np.ndarray   # (C, C)
    bias: np.ndarray
    use_norm: bool = True

    @property
    def kernel_size(self) -> int:
        return self.kernels[0].shape[-1]


@dataclass
class PgmfParams:
    latent_v: LatentParams
    latent_i: LatentParams
    psn: PsnParams
    ssm: ssm_mod.BiSSMParams
    dropout: float = 0.0


def init_latent(prng: Prng, channels: int) -> LatentParams:
    s = fan_in_scale(channels)
    return LatentParams(init_params(prng, (channels, channels), s),
                        init_params(prng, (channels,), s))


def init_psn(prng: Prng, channels: int, kernel_size: int = 3) -> PsnParams:
    s = fan_in_scale(kernel_size * kernel_size)
    kernels = [init_params(prng, (channels, kernel_size, kernel_size), s) for _ in range(3)]
    biases = [init_params(prng, (channels,), s) for _ in range(3)]
    sc = fan_in_scale(channels)
    return PsnParams(kernels=kernels, conv_biases=biases,
                     ln_gain=np.ones(channels), ln_bias=np.zeros(channels),
                     weight=init_params(prng, (channels, channels), sc),
                     bias=init_params(prng, (channels,), sc))


def init_pgmf(prng: Prng, channels: int, state_dim: int = 4, psn_kernel: int = 3,
              discretization=ssm_mod.ZOH, dropout: float = 0.0,
              share_latent: bool = True) -> PgmfParams:
    latent_v = init_latent(prng, channels)
    latent_i = latent_v if share_latent else init_latent(prng, channels)
    return PgmfParams(latent_v=latent_v, latent_i=latent_i,
                      psn=init_psn(prng, channels, psn_kernel),
                      ssm=ssm_mod.init_bi_ssm(prng, channels, state_dim, discretization),
                      dropout=dropout)


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

def latent_project(f, params: LatentParams):
    """Pointwise affine map across channels, then SiLU unless in linear mode."""
    out = pointwise_linear(f, params.weight, params.bias)
    return silu(out) if params.activation else out


def psn(x, params: PsnParams):
    """Priority score network: 3 x (depthwise conv + SiLU), LayerNorm, Linear."""
    h = x
    for kern, bias in zip(params.kernels, params.conv_biases):
        h = silu(add_channel_bias(depthwise_conv(h, kern), bias))
    if params.use_norm:
        h = channel_layer_norm(h, params.ln_gain, params.ln_bias)
    return pointwise_linear(h, params.weight, params.bias)


# ---------------------------------------------------------------------------
# Priority serialization
# ---------------------------------------------------------------------------

_SIGN = np.uint64(1 << 63)
RADIX_LABEL = "lsd-radix (4 x 16-bit stable passes, O(N))"
COMPARISON_LABEL = "comparison mergesort (O(N log N))"


def _descending_keys(scores):
    s = np.asarray(scores, dtype=np.float64) + 0.0  # folds -0.0 into +0.0
    bits = s.view(np.uint64)
    ascending = np.where(bits & _SIGN, ~bits, bits | _SIGN)
    return ~ascending


def radix_argsort_desc(scores) -> np.ndarray:
    """Stable descending argsort of a 1-D float array by LSD radix sort.

    Floats map to order-preserving unsigned keys; each pass is a stable
    16-bit counting sort (numpy's stable argsort on uint16 is a radix sort).
    """
    keys = _descending_keys(scores)
    perm = np.arange(keys.size)
    for shift in (0, 16, 32, 48):
        digit = ((keys[perm] >> np.uint64(shift)) & np.uint64(0xFFFF)).astype(np.uint16)
        perm = perm[np.argsort(digit, kind="stable")]
    return perm


def comparison_argsort_desc(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64) + 0.0
    return np.argsort(-s, kind="stable")


def priority_order(scores, method="radix") -> np.ndarray:
    """Row-wise descending stable permutation for scores of shape (B, N)."""
    sort = radix_argsort_desc if method == "radix" else comparison_argsort_desc
    return np.stack([sort(row) for row in np.atleast_2d(scores)])


def priority_scores(f) -> np.ndarray:
    """Channel mean per spatial token: (B, C, H, W) -> (B, H*W)."""
    b, c, h, w = f.shape
    return f.reshape(b, c, h * w).mean(axis=1)


@dataclass
class PrioritySequence:
    tokens: np.ndarray   # (B, H*W, C), highest priority first
    perm: np.ndarray     # (B, H*W); tokens[:, k] is spatial index perm[:, k]
    scores: np.ndarray   # (B, H*W) in spatial order
    height: int
    width: int


def _check_perm(perm):
    n = perm.shape[-1]
    for row in np.atleast_2d(perm):
        if row.min() < 0 or row.max() >= n or not np.all(np.bincount(row, minlength=n) == 1):
            raise AssertionError("serialization order is not a permutation")


def priority_serialize(f, scores, method="radix") -> PrioritySequence:
    b, c, h, w = f.shape
    scores = np.asarray(scores)
    if scores.shape != (b, h * w):
        raise ShapeError(f"scores must be {(b, h * w)}, got {scores.shape}")
    perm = priority_order(scores, method)
    _check_perm(perm)
    flat = flatten_spatial(f)
    tokens = np.take_along_axis(flat, perm[:, :, None], axis=1)
    return PrioritySequence(tokens=tokens, perm=perm, scores=scores, height=h, width=w)


def unsort_tokens(tokens, perm):
    """Scatter priority-ordered tokens (B, N, C) back to spatial order."""
    out = np.empty_like(tokens)
    np.put_along_axis(out, perm[:, :, None], tokens, axis=1)
    return out


def deserialize(seq: PrioritySequence) -> np.ndarray:
    _check_perm(seq.perm)
    return unflatten_spatial(unsort_tokens(seq.tokens, seq.perm), seq.height, seq.width)


def build_fusion_sequence(seq_v, seq_i, variant=DEFAULT_VARIANT) -> np.ndarray:
    """Concatenate two priority sequences (B, N, C) into (B, 2N, C)."""
    tv = getattr(seq_v, "tokens", seq_v)
    ti = getattr(seq_i, "tokens", seq_i)
    if tv.shape != ti.shape:
        raise ShapeError(f"sequence shapes differ: {tv.shape} vs {ti.shape}")
    variant = FusionVariant(variant)
    if variant.reverse_v:
        tv = tv[:, ::-1]
    if variant.reverse_i:
        ti = ti[:, ::-1]
    return np.concatenate([tv, ti], axis=1)


def split_fusion_sequence(seq, variant=DEFAULT_VARIANT):
    """Inverse of :func:`build_fusion_sequence`: halves back in priority order."""
    variant = FusionVariant(variant)
    n = seq.shape[1] // 2
    hv, hi = seq[:, :n], seq[:, n:]
    if variant.reverse_v:
        hv = hv[:, ::-1]
    if variant.reverse_i:
        hi = hi[:, ::-1]
    return np.ascontiguousarray(hv), np.ascontiguousarray(hi)


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------

@dataclass
class FusionResult:
    fused: np.ndarray
    perm_v: np.ndarray
    perm_i: np.ndarray
    scores_v: np.ndarray
    scores_i: np.ndarray
    fusion_part: np.ndarray
    timings: dict = field(default_factory=dict)


def dropout(x, rate: float, prng: Prng):
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        return np.zeros_like(x)
    keep = prng.random(x.shape) >= rate
    return np.where(keep, x / (1.0 - rate), 0.0).astype(x.dtype)


def pgmf_fuse(f_v, f_i, params: PgmfParams, variant=DEFAULT_VARIANT, prng: Prng = None,
              sort_method="radix") -> FusionResult:
    if f_v.shape != f_i.shape:
        raise ShapeError(f"RGB features {f_v.shape} and IR features {f_i.shape} differ in shape")
    variant = FusionVariant(variant)
    b, c, h, w = f_v.shape
    timings = {}

    t0 = time.perf_counter()
    f_vl = latent_project(f_v, params.latent_v)
    f_il = latent_project(f_i, params.latent_i)
    pmat = psn(f_vl - f_il, params.psn)
    timings["psn"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    scores_v = priority_scores(f_vl + pmat)
    scores_i = priority_scores(f_il + pmat)
    seq_v = priority_serialize(f_vl, scores_v, sort_method)
    seq_i = priority_serialize(f_il, scores_i, sort_method)
    seq = build_fusion_sequence(seq_v, seq_i, variant)
    timings["serialize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    out = ssm_mod.bi_ssm(params.ssm, seq)
    timings["ssm"] = time.perf_counter() - t0

    half_v, half_i = split_fusion_sequence(out, variant)
    f_pv = unflatten_spatial(unsort_tokens(half_v, seq_v.perm), h, w)
    f_pi = unflatten_spatial(unsort_tokens(half_i, seq_i.perm), h, w)
    f_p = dropout(f_pv + f_pi, params.dropout, prng if prng is not None else Prng(0))
    fused = f_v + f_i + f_p
    return FusionResult(fused=fused, perm_v=seq_v.perm, perm_i=seq_i.perm,
                        scores_v=scores_v, scores_i=scores_i, fusion_part=f_p, timings=timings)


def silence_ssm_output(params: PgmfParams) -> PgmfParams:
    """Copy of ``params`` whose SSM readout C and output bias are zero."""
    quiet = copy.deepcopy(params)
    for direction in (quiet.ssm.fwd, quiet.ssm.bwd):
        direction.w_c[:] = 0.0
        direction.b_c[:] = 0.0
    quiet.ssm.b_out[:] = 0.0
    return quiet


# ---------------------------------------------------------------------------
# Complexity probe
# ---------------------------------------------------------------------------

RATIO_BAND = (1.6, 2.6)


def _grid(n):
    h = 2 ** (int(np.log2(n)) // 2)
    if n % h:
        h = 1
    return h, n // h


def complexity_probe(sizes, repeats: int = 5, channels: int = 4, seed: int = 0,
                     sort_method="radix", min_seconds: float = 0.1) -> dict:
    """Wall time per stage at each token count N = H*W.

    Stages: PSN on (1, C, H, W); scoring + sort + gather of one modality;
    bidirectional selective SSM over the 2N fusion sequence.

    Each repeat times every size back to back, so slow drifts in machine
    load hit all sizes of a repeat alike.  Rows hold per-size medians;
    doubling ratios are medians of the per-repeat paired ratios.  Fast
    stages run an inner loop whose count is fixed at the smallest size and
    reused for all sizes.  Garbage collection is off while timing, as in
    :mod:`timeit`.
    """
    sizes = [int(s) for s in sizes]
    if sorted(sizes) != sizes or len(set(sizes)) != len(sizes):
        raise ValueError("sizes must be strictly increasing")
    stage_names = ("psn", "sort_serialize", "ssm")
    prng = Prng(seed)
    params = init_pgmf(prng, channels)
    workloads = []
    for n in sizes:
        h, w = _grid(n)
        x = prng.uniform((1, channels, h, w), -1.0, 1.0)
        seq = prng.uniform((1, 2 * n, channels), -1.0, 1.0)
        workloads.append({
            "psn": lambda x=x: psn(x, params.psn),
            "sort_serialize": lambda x=x: priority_serialize(x, priority_scores(x), sort_method),
            "ssm": lambda seq=seq: ssm_mod.bi_ssm(params.ssm, seq),
        })
    inner = {}
    for name in stage_names:
        fn = workloads[0][name]
        fn()  # warm-up
        t0 = time.perf_counter()
        fn()
        once = time.perf_counter() - t0
        inner[name] = max(1, int(np.ceil(min_seconds / max(once, 1e-9))))
    samples = {name: np.zeros((repeats, len(sizes))) for name in stage_names}
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for r in range(repeats):
            for k, work in enumerate(workloads):
                for name in stage_names:
                    fn = work[name]
                    t0 = time.perf_counter()
                    for _ in range(inner[name]):
                        fn()
                    samples[name][r, k] = (time.perf_counter() - t0) / inner[name]
    finally:
        if gc_was_enabled:
            gc.enable()
    rows = []
    for k, n in enumerate(sizes):
        h, w = _grid(n)
        row = {"n": n, "height": h, "width": w}
        for name in stage_names:
            row[name] = float(np.median(samples[name][:, k]))
        rows.append(row)
    ratios = {}
    for name in stage_names:
        paired = samples[name][:, 1:] / samples[name][:, :-1]
        ratios[name] = [float(v) for v in np.median(paired, axis=0)]
    lo, hi = RATIO_BAND
    flagged = {name: [not (lo <= r <= hi) for r in rs] for name, rs in ratios.items()}
    return {
        "rows": rows,
        "ratios": ratios,
        "ratio_band": list(RATIO_BAND),
        "out_of_band": flagged,
        "sort_method": RADIX_LABEL if sort_method == "radix" else COMPARISON_LABEL,
        "repeats": repeats,
        "inner_loops": inner,
        "channels": channels,
    }

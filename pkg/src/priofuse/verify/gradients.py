"""Analytic gradients checked against central finite differences.

Five model classes are covered, all evaluated in binary64 with the scalar
objective ``L = sum(outputs)``:

``lti-ssm``
    One time-invariant SSM (a, b, c, delta) over a (T, D) stream.  The
    analytic path goes through the convolution kernel; the probe runs the
    recurrence, so the check also ties the two forms together.
``psn``
    The priority score network on its own.
``pgmf-path``
    The linearized fusion path used for gradient derivation:
    ``p_m = f_m + psn(f_m)`` with ``f_m`` the latent projection of modality
    m, both priority sequences joined in variant-D order and run through a
    bidirectional LTI kernel.  The PSN is shared between the two branches,
    so its gradient is the sum of two chain-rule terms.
``alg1-path``
    The fusion forward as :func:`priofuse.pgmf.pgmf_fuse` computes it, with
    the bidirectional LTI kernel in place of the selective block.  Here the
    PSN only steers the sort; with permutations held fixed its gradient is
    identically zero, and the check confirms that.
``selective``
    The bidirectional selective block end to end, by backpropagation
    through time.

Sort orders are computed once at the base parameters and frozen.  Probes
perturb parameters only, never the inputs that feed the scores, so a
probe can never flip a permutation.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..bundle import iter_leaves
from ..pgmf import (LatentParams, PsnParams, build_fusion_sequence, init_latent, init_psn,
                    priority_order, priority_scores, split_fusion_sequence, unsort_tokens)
from ..ssm import ZOH, BiSSMParams, bi_ssm, init_bi_ssm, scan
from ..tensor import Prng, flatten_spatial, unflatten_spatial
from . import backward as bw

MODELS = ("lti-ssm", "psn", "pgmf-path", "alg1-path", "selective")
REGIMES = {
    "lti-ssm": "lti-kernel",
    "psn": "psn-network",
    "pgmf-path": "linearized-fusion (lti kernel)",
    "alg1-path": "implemented-fusion (lti kernel, frozen sort)",
    "selective": "selective-bptt",
}
TOLERANCES = {"lti-ssm": 1e-6, "psn": 1e-4, "pgmf-path": 1e-4, "alg1-path": 1e-4,
              "selective": 1e-5}
H_RANGE = (1e-7, 1e-4)
DEFAULT_H = 1e-5
MIN_COORDS = 32
REL_FLOOR = 1e-8
FACTOR2_TOL = 1e-10


class NumericalError(ArithmeticError):
    def __init__(self, message, path):
        super().__init__(f"{message} at {path}")
        self.path = path


@dataclass
class LtiParams:
    """Single-channel time-invariant SSM, applied to every channel."""

    a: np.ndarray      # (n,), negative
    b: np.ndarray      # (n,)
    c: np.ndarray      # (n,)
    delta: np.ndarray  # 0-d, positive
    discretization: str = ZOH


@dataclass
class FusionPathParams:
    theta_v: LatentParams
    theta_i: LatentParams
    psn: PsnParams
    omega_f: LtiParams
    omega_b: LtiParams


@dataclass
class GroupResult:
    max_rel_err: float
    worst_path: str
    n_coords: int


@dataclass
class GradientReport:
    model: str
    regime: str
    dtype: str
    h: float
    tolerance: float
    groups: dict = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max((g.max_rel_err for g in self.groups.values()), default=0.0)

    @property
    def worst_path(self) -> str:
        if not self.groups:
            return ""
        return max(self.groups.values(), key=lambda g: g.max_rel_err).worst_path

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "model": self.model, "regime": self.regime, "dtype": self.dtype, "h": self.h,
            "tolerance": self.tolerance, "max_rel_err": self.max_rel_err,
            "worst_path": self.worst_path, "passed": self.passed,
            "groups": {k: {"max_rel_err": g.max_rel_err, "worst_path": g.worst_path,
                           "n_coords": g.n_coords} for k, g in self.groups.items()},
        }


# ---------------------------------------------------------------------------
# Random problem instances
# ---------------------------------------------------------------------------

def init_lti(prng: Prng, state_dim=4, discretization=ZOH) -> LtiParams:
    return LtiParams(a=-(0.3 + prng.uniform(state_dim)),
                     b=prng.uniform(state_dim, -1.0, 1.0),
                     c=prng.uniform(state_dim, -1.0, 1.0),
                     delta=np.array(0.3 + 0.5 * prng.uniform(1)[0]),
                     discretization=discretization)


def symmetric_path_params(prng: Prng, channels, state_dim=4) -> FusionPathParams:
    """Shared latent projection and identical forward/backward kernels."""
    theta = init_latent(prng, channels)
    omega = init_lti(prng, state_dim)
    return FusionPathParams(theta_v=theta, theta_i=copy.deepcopy(theta),
                            psn=init_psn(prng, channels),
                            omega_f=omega, omega_b=copy.deepcopy(omega))


def random_path_params(prng: Prng, channels, state_dim=4) -> FusionPathParams:
    return FusionPathParams(theta_v=init_latent(prng, channels),
                            theta_i=init_latent(prng, channels),
                            psn=init_psn(prng, channels),
                            omega_f=init_lti(prng, state_dim),
                            omega_b=init_lti(prng, state_dim))


# ---------------------------------------------------------------------------
# Shared pieces: bidirectional LTI conv over (B, T, C)
# ---------------------------------------------------------------------------

def _bi_lti_forward(seq, omega_f, omega_b):
    t_len = seq.shape[1]
    kf, cache_f = bw.lti_kernel_forward(omega_f, t_len)
    kb, cache_b = bw.lti_kernel_forward(omega_b, t_len)
    out = np.empty_like(seq)
    for k, x in enumerate(seq):
        yf = np.zeros_like(x)
        yb = np.zeros_like(x)
        xr = x[::-1]
        for m in range(t_len):
            yf[m:] += kf[m] * x[:t_len - m]
            yb[m:] += kb[m] * xr[:t_len - m]
        out[k] = yf + yb[::-1]
    return out, (kf, cache_f, kb, cache_b)


def _bi_lti_backward(seq, omega_f, omega_b, cache, gy):
    kf, cache_f, kb, cache_b = cache
    dseq = np.empty_like(seq)
    dkf = np.zeros_like(kf)
    dkb = np.zeros_like(kb)
    for k, x in enumerate(seq):
        dx_f, dk = bw.causal_conv_backward(x, kf, gy[k])
        dkf += dk
        dx_b, dk = bw.causal_conv_backward(x[::-1], kb, gy[k][::-1])
        dkb += dk
        dseq[k] = dx_f + dx_b[::-1]
    return (dseq, bw.lti_kernel_backward(omega_f, cache_f, dkf),
            bw.lti_kernel_backward(omega_b, cache_b, dkb))


def _prefixed(prefix, grads):
    return {f"{prefix}.{k}": v for k, v in grads.items()}


def frozen_perms(params: FusionPathParams, f_v, f_i, linearized=True):
    """Sort orders at the base parameters; held fixed during probing."""
    fv, _ = bw.latent_forward(f_v, params.theta_v)
    fi, _ = bw.latent_forward(f_i, params.theta_i)
    if linearized:
        sv = fv + bw.psn_forward(fv, params.psn)[0]
        si = fi + bw.psn_forward(fi, params.psn)[0]
    else:
        pmat = bw.psn_forward(fv - fi, params.psn)[0]
        sv, si = fv + pmat, fi + pmat
    return (priority_order(priority_scores(sv)), priority_order(priority_scores(si)))


def _gather(p, perm):
    return np.take_along_axis(flatten_spatial(p), perm[:, :, None], axis=1)


def _scatter_grad(g_tokens, perm, h, w):
    return unflatten_spatial(unsort_tokens(g_tokens, perm), h, w)


# ---------------------------------------------------------------------------
# Linearized fusion path
# ---------------------------------------------------------------------------

def path_loss(params: FusionPathParams, f_v, f_i, perms):
    fv, _ = bw.latent_forward(f_v, params.theta_v)
    fi, _ = bw.latent_forward(f_i, params.theta_i)
    pv = fv + bw.psn_forward(fv, params.psn)[0]
    pi = fi + bw.psn_forward(fi, params.psn)[0]
    seq = build_fusion_sequence(_gather(pv, perms[0]), _gather(pi, perms[1]), "d")
    return float(np.sum(_bi_lti_forward(seq, params.omega_f, params.omega_b)[0]))


def path_gradients(params: FusionPathParams, f_v, f_i, perms, detach_ir=False):
    """Reverse pass of :func:`path_loss`.

    With ``detach_ir`` the IR branch's PSN term contributes nothing to the
    PSN gradient (it still flows to ``theta_i``).
    """
    _, _, h, w = f_v.shape
    fv, cache_lv = bw.latent_forward(f_v, params.theta_v)
    fi, cache_li = bw.latent_forward(f_i, params.theta_i)
    qv, cache_pv = bw.psn_forward(fv, params.psn)
    qi, cache_pi = bw.psn_forward(fi, params.psn)
    seq = build_fusion_sequence(_gather(fv + qv, perms[0]), _gather(fi + qi, perms[1]), "d")
    y, cache = _bi_lti_forward(seq, params.omega_f, params.omega_b)
    dseq, g_of, g_ob = _bi_lti_backward(seq, params.omega_f, params.omega_b, cache,
                                        np.ones_like(y))
    gtv, gti = split_fusion_sequence(dseq, "d")
    g_pv = _scatter_grad(gtv, perms[0], h, w)
    g_pi = _scatter_grad(gti, perms[1], h, w)
    dfv_psn, g_psn_v = bw.psn_backward(cache_pv, params.psn, g_pv)
    dfi_psn, g_psn_i = bw.psn_backward(cache_pi, params.psn, g_pi)
    _, g_tv = bw.latent_backward(cache_lv, params.theta_v, g_pv + dfv_psn)
    _, g_ti = bw.latent_backward(cache_li, params.theta_i, g_pi + dfi_psn)
    g_psn = g_psn_v if detach_ir else {k: g_psn_v[k] + g_psn_i[k] for k in g_psn_v}
    grads = {}
    grads.update(_prefixed("theta_v", g_tv))
    grads.update(_prefixed("theta_i", g_ti))
    grads.update(_prefixed("psn", g_psn))
    grads.update(_prefixed("omega_f", g_of))
    grads.update(_prefixed("omega_b", g_ob))
    return grads


# ---------------------------------------------------------------------------
# Fusion path as implemented (PSN acts only through the sort)
# ---------------------------------------------------------------------------

def alg1_loss(params: FusionPathParams, f_v, f_i, perms):
    _, _, h, w = f_v.shape
    fv, _ = bw.latent_forward(f_v, params.theta_v)
    fi, _ = bw.latent_forward(f_i, params.theta_i)
    # pmat only feeds the sort, which is frozen; it is still computed so that
    # any accidental dependence would show up in the probe
    pmat = bw.psn_forward(fv - fi, params.psn)[0]
    seq = build_fusion_sequence(_gather(fv, perms[0]), _gather(fi, perms[1]), "d")
    y, _ = _bi_lti_forward(seq, params.omega_f, params.omega_b)
    hv, hi = split_fusion_sequence(y, "d")
    fused = (f_v + f_i + _scatter_grad(hv, perms[0], h, w) + _scatter_grad(hi, perms[1], h, w)
             + 0.0 * pmat)
    return float(np.sum(fused))


def alg1_gradients(params: FusionPathParams, f_v, f_i, perms):
    _, _, h, w = f_v.shape
    fv, cache_lv = bw.latent_forward(f_v, params.theta_v)
    fi, cache_li = bw.latent_forward(f_i, params.theta_i)
    seq = build_fusion_sequence(_gather(fv, perms[0]), _gather(fi, perms[1]), "d")
    y, cache = _bi_lti_forward(seq, params.omega_f, params.omega_b)
    dseq, g_of, g_ob = _bi_lti_backward(seq, params.omega_f, params.omega_b, cache,
                                        np.ones_like(y))
    gtv, gti = split_fusion_sequence(dseq, "d")
    _, g_tv = bw.latent_backward(cache_lv, params.theta_v, _scatter_grad(gtv, perms[0], h, w))
    _, g_ti = bw.latent_backward(cache_li, params.theta_i, _scatter_grad(gti, perms[1], h, w))
    grads = {}
    grads.update(_prefixed("theta_v", g_tv))
    grads.update(_prefixed("theta_i", g_ti))
    grads.update({f"psn.{p}": np.zeros_like(v) for p, v in iter_leaves(params.psn)
                  if isinstance(v, np.ndarray)})
    grads.update(_prefixed("omega_f", g_of))
    grads.update(_prefixed("omega_b", g_ob))
    return grads


# ---------------------------------------------------------------------------
# Single-block models
# ---------------------------------------------------------------------------

def lti_loss(omega: LtiParams, x):
    return float(np.sum(scan(bw.omega_system(omega), x).y))


def lti_gradients(omega: LtiParams, x):
    kernel, cache = bw.lti_kernel_forward(omega, x.shape[0])
    _, dk = bw.causal_conv_backward(x, kernel, np.ones_like(x))
    return bw.lti_kernel_backward(omega, cache, dk)


def psn_loss(params: PsnParams, x):
    return float(np.sum(bw.psn_forward(x, params)[0]))


def psn_gradients(params: PsnParams, x):
    out, cache = bw.psn_forward(x, params)
    return bw.psn_backward(cache, params, np.ones_like(out))[1]


def selective_loss(params: BiSSMParams, seq):
    return float(np.sum(bi_ssm(params, seq)))


def selective_gradients(params: BiSSMParams, seq):
    grads = {"w_out": np.zeros_like(params.w_out), "b_out": np.zeros_like(params.b_out)}
    for x in seq:
        yf, cache_f = bw.selective_forward(params.fwd, x)
        yb, cache_b = bw.selective_forward(params.bwd, x[::-1])
        ytot = yf + yb[::-1]
        g_out = np.ones_like(ytot)
        grads["w_out"] += g_out.T @ ytot
        grads["b_out"] += g_out.sum(axis=0)
        gy = g_out @ params.w_out
        _, gf = bw.selective_backward(params.fwd, cache_f, gy)
        _, gb = bw.selective_backward(params.bwd, cache_b, gy[::-1])
        for k, v in _prefixed("fwd", gf).items():
            grads[k] = grads.get(k, 0.0) + v
        for k, v in _prefixed("bwd", gb).items():
            grads[k] = grads.get(k, 0.0) + v
    return grads


# ---------------------------------------------------------------------------
# Finite-difference driver
# ---------------------------------------------------------------------------

def _coordinates(params, group_of, n_coords, rng):
    """Per group, a sorted random subset of (path, flat index) pairs."""
    by_group = {}
    for path, value in iter_leaves(params):
        if isinstance(value, np.ndarray):
            for k in range(value.size):
                by_group.setdefault(group_of(path), []).append((path, k))
    chosen = {}
    for group, coords in by_group.items():
        if len(coords) <= n_coords:
            chosen[group] = coords
        else:
            idx = np.sort(rng.choice(len(coords), size=n_coords, replace=False))
            chosen[group] = [coords[i] for i in idx]
    return chosen


def fd_compare(params, loss, analytic: dict, h, n_coords=MIN_COORDS, seed=0,
               group_of=lambda p: p.split(".")[0]):
    """Central differences on a coordinate subset; returns {group: GroupResult}."""
    for path, g in analytic.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite analytic gradient", path)
    leaves = {p: v for p, v in iter_leaves(params) if isinstance(v, np.ndarray)}
    missing = set(leaves) - set(analytic)
    if missing:
        raise KeyError(f"no analytic gradient for {sorted(missing)}")
    rng = np.random.default_rng(seed)
    results = {}
    for group, coords in _coordinates(params, group_of, n_coords, rng).items():
        worst, worst_path = 0.0, ""
        for path, k in coords:
            arr = leaves[path]
            flat = arr.reshape(-1)
            if not np.shares_memory(flat, arr):
                raise RuntimeError(f"leaf {path} is not contiguous")
            orig = flat[k]
            flat[k] = orig + h
            up = loss(params)
            flat[k] = orig - h
            down = loss(params)
            flat[k] = orig
            fd = (up - down) / (2.0 * h)
            if not np.isfinite(fd):
                raise NumericalError("non-finite finite difference", f"{path}[{k}]")
            a = float(np.asarray(analytic[path]).reshape(-1)[k])
            err = abs(a - fd) / max(abs(a), abs(fd), REL_FLOOR)
            if err > worst or not worst_path:
                worst, worst_path = err, f"{path}[{k}]"
        results[group] = GroupResult(max_rel_err=worst, worst_path=worst_path,
                                     n_coords=len(coords))
    return results


def _contiguous(params):
    for path, v in iter_leaves(params):
        if isinstance(v, np.ndarray) and not v.flags.c_contiguous:
            raise RuntimeError(f"leaf {path} is not contiguous")
    return params


def build_problem(model: str, seed: int = 0, channels: int = 4, size: int = 6,
                  t_len: int = 16, state_dim: int = 4):
    """Return ``(params, loss_fn, grad_fn)`` for one random instance of ``model``."""
    if model not in MODELS:
        raise ValueError(f"unknown gradient model {model!r}; expected one of {MODELS}")
    prng = Prng(seed)
    if model == "lti-ssm":
        omega = init_lti(prng, state_dim)
        x = prng.uniform((t_len, 3), -1.0, 1.0)
        return omega, (lambda p: lti_loss(p, x)), (lambda p: lti_gradients(p, x))
    if model == "psn":
        params = init_psn(prng, channels)
        x = prng.uniform((1, channels, size, size), -1.0, 1.0)
        return params, (lambda p: psn_loss(p, x)), (lambda p: psn_gradients(p, x))
    if model == "selective":
        params = init_bi_ssm(prng, channels, state_dim)
        seq = prng.uniform((1, t_len, channels), -1.0, 1.0)
        return (params, (lambda p: selective_loss(p, seq)),
                (lambda p: selective_gradients(p, seq)))
    params = random_path_params(prng, channels, state_dim)
    f_v = prng.uniform((1, channels, size, size), -1.0, 1.0)
    f_i = prng.uniform((1, channels, size, size), -1.0, 1.0)
    linearized = model == "pgmf-path"
    perms = frozen_perms(params, f_v, f_i, linearized)
    if linearized:
        return (params, (lambda p: path_loss(p, f_v, f_i, perms)),
                (lambda p: path_gradients(p, f_v, f_i, perms)))
    return (params, (lambda p: alg1_loss(p, f_v, f_i, perms)),
            (lambda p: alg1_gradients(p, f_v, f_i, perms)))


def check_gradients(model: str, seed: int = 0, h: float = DEFAULT_H,
                    n_coords: int = MIN_COORDS) -> GradientReport:
    if not H_RANGE[0] <= h <= H_RANGE[1]:
        raise ValueError(f"step h={h} outside [{H_RANGE[0]:g}, {H_RANGE[1]:g}]")
    if n_coords < MIN_COORDS:
        raise ValueError(f"need at least {MIN_COORDS} coordinates per group, got {n_coords}")
    params, loss, grad = build_problem(model, seed)
    _contiguous(params)
    groups = fd_compare(params, loss, grad(params), h, n_coords, seed)
    return GradientReport(model=model, regime=REGIMES[model], dtype="float64", h=h,
                          tolerance=TOLERANCES[model], groups=groups)


def factor_two_check(seed: int = 0, channels: int = 4, size: int = 6, state_dim: int = 4):
    """Shared-PSN gradient with identical branches vs twice the IR-detached gradient.

    Returns the largest absolute difference over all PSN leaves, scaled by
    the largest gradient magnitude so the figure is unit-free.
    """
    prng = Prng(seed)
    params = symmetric_path_params(prng, channels, state_dim)
    f = prng.uniform((1, channels, size, size), -1.0, 1.0)
    perms = frozen_perms(params, f, f.copy())
    full = path_gradients(params, f, f.copy(), perms)
    half = path_gradients(params, f, f.copy(), perms, detach_ir=True)
    keys = [k for k in full if k.startswith("psn.")]
    diff = max(float(np.max(np.abs(full[k] - 2.0 * half[k]))) for k in keys)
    scale = max(float(np.max(np.abs(full[k]))) for k in keys)
    return {"max_abs_diff": diff, "scale": scale, "rel_diff": diff / max(scale, REL_FLOOR),
            "tolerance": FACTOR2_TOL, "perms_equal": bool(np.array_equal(*perms))}

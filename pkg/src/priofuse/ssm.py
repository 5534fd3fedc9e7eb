"""Diagonal state-space models: discretization, scans, kernels, decay analysis.

A :class:`StateSpaceSystem` describes one sequence.  Shapes (``T`` steps,
``D`` channels, ``n`` state size):

* ``a``      continuous diagonal, ``(n,)`` shared by all channels or ``(D, n)``
* ``delta``  scalar (time invariant) or ``(T,)`` / ``(T, D)`` per step
* ``b, c``   ``(n,)`` time invariant or ``(T, n)`` per step, shared across channels

Each channel ``d`` and state ``j`` run the independent scalar recurrence::

    h[t, d, j] = abar[t, d, j] * h[t-1, d, j] + bbar[t, d, j] * x[t, d]
    y[t, d]    = sum_j c[t, j] * h[t, d, j]

with ``h[-1] = 0``.  Indices in this module are 0-based.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .layers import softplus
from .tensor import Prng, ShapeError, fan_in_scale, init_params

ZOH = "zoh"
EULER_B = "euler_b"
DISCRETIZATIONS = (ZOH, EULER_B)


class InstabilityError(ValueError):
    """A continuous eigenvalue is non-negative or a discrete one is >= 1."""


class UnsupportedModeError(ValueError):
    pass


@dataclass
class StateSpaceSystem:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    delta: object = 1.0
    discretization: str = ZOH

    def __post_init__(self):
        self.a = np.atleast_2d(self.a)
        self.b = np.asarray(self.b)
        self.c = np.asarray(self.c)
        self.delta = np.asarray(self.delta)
        if self.discretization not in DISCRETIZATIONS:
            raise ValueError(f"unknown discretization {self.discretization!r}")
        if not np.all(self.a < 0):
            raise InstabilityError("continuous state matrix needs all a_j < 0, "
                                   f"max entry is {float(np.max(self.a))}")
        if not np.all(self.delta > 0):
            raise ValueError("step size delta must be positive")
        n = self.state_dim
        if self.b.shape[-1] != n or self.c.shape[-1] != n:
            raise ShapeError(f"b {self.b.shape} and c {self.c.shape} must end in state dim {n}")
        if self.delta.ndim == 1:
            self.delta = self.delta[:, None]

    @property
    def state_dim(self) -> int:
        return self.a.shape[-1]

    @property
    def mode(self) -> str:
        if self.delta.ndim == 0 and self.b.ndim == 1 and self.c.ndim == 1:
            return "lti"
        return "selective"

    @property
    def length(self):
        """Number of steps fixed by per-step parameters, or None for LTI."""
        for arr in (self.delta, self.b, self.c):
            if arr.ndim == 2:
                return arr.shape[0]
        return None

    def describe(self) -> dict:
        return {
            "mode": self.mode,
            "state_dim": int(self.state_dim),
            "discretization": self.discretization,
            "length": self.length,
            "a_max": float(np.max(self.a)),
            "a_min": float(np.min(self.a)),
        }


@dataclass
class ScanResult:
    y: np.ndarray
    h_final: np.ndarray
    states: np.ndarray = None


def discretize(sys: StateSpaceSystem):
    """Return ``(abar, bbar)``.

    ZOH: ``abar = exp(delta * a)``, ``bbar = (abar - 1) / a * b``.
    EulerB keeps the same ``abar`` with ``bbar = delta * b``.
    Shapes are ``(D, n)`` for LTI systems and ``(T, D, n)`` otherwise.
    """
    a = sys.a
    if sys.mode == "lti":
        abar = np.exp(sys.delta * a)
        b = sys.b
        delta = sys.delta
    else:
        delta = sys.delta[..., None] if sys.delta.ndim else sys.delta
        abar = np.exp(delta * a)
        b = sys.b[:, None, :] if sys.b.ndim == 2 else sys.b
        if abar.ndim == 2:
            abar = np.broadcast_to(abar, (sys.length,) + abar.shape)
    if sys.discretization == ZOH:
        bbar = (abar - 1.0) / a * b
    else:
        bbar = delta * b * np.ones_like(abar)
    if np.any(abar >= 1.0):
        raise InstabilityError("discrete eigenvalue >= 1; delta * a underflowed to 0")
    return abar, bbar


def _as_tokens(x):
    x = np.asarray(x)
    if x.ndim == 1:
        return x[:, None], True
    if x.ndim == 2:
        return x, False
    raise ShapeError(f"scan input must be (T,) or (T, D), got {x.shape}")


def _check_length(sys, t_len):
    length = sys.length
    if length is not None and length != t_len:
        raise ShapeError(f"system has {length} per-step parameters, input has {t_len} tokens")


def scan(sys: StateSpaceSystem, x, return_states=False) -> ScanResult:
    """Exact left-to-right recurrence from a zero initial state."""
    xt, squeeze = _as_tokens(x)
    t_len, d = xt.shape
    _check_length(sys, t_len)
    abar, bbar = discretize(sys)
    dtype = np.result_type(xt.dtype, np.float32)
    abar = abar.astype(dtype, copy=False)
    n = sys.state_dim
    # drive[t, d, j] = bbar[t, d, j] * x[t, d]
    drive = np.broadcast_to(bbar, (t_len,) + bbar.shape[-2:]) * xt[:, :, None]
    if drive.shape[1] != d:
        drive = np.broadcast_to(drive, (t_len, d, n))
    drive = drive.astype(dtype, copy=False)
    states = np.empty((t_len, d, n), dtype=dtype)
    h = np.zeros((d, n), dtype=dtype)
    if abar.ndim == 2:
        for t in range(t_len):
            h = abar * h + drive[t]
            states[t] = h
    else:
        for t in range(t_len):
            h = abar[t] * h + drive[t]
            states[t] = h
    c = sys.c.astype(dtype, copy=False)
    if c.ndim == 1:
        y = states @ c
    else:
        y = np.einsum("tdn,tn->td", states, c)
    if squeeze:
        y = y[:, 0]
    return ScanResult(y=y, h_final=h, states=states if return_states else None)


def conv_kernel(sys: StateSpaceSystem, length: int) -> np.ndarray:
    """``K[m, d] = sum_j c_j * abar[d, j]**m * bbar[d, j]`` for m < length."""
    if sys.mode != "lti":
        raise UnsupportedModeError("convolution form exists only for time-invariant systems")
    abar, bbar = discretize(sys)
    powers = abar[None] ** np.arange(length)[:, None, None]
    return np.einsum("mdn,dn,n->md", powers, bbar, sys.c)


def apply_kernel(x, kernel) -> np.ndarray:
    """Causal convolution ``y[t] = sum_{m<=t} K[m] * x[t - m]``.

    ``x`` is (T,) or (T, D); ``kernel`` is (L,) or (L, D) and is truncated
    or implicitly zero-extended to T.
    """
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    t_len = x.shape[0]
    y = np.zeros(np.broadcast_shapes(x.shape, kernel.shape[1:]), dtype=np.result_type(x, kernel))
    for m in range(min(t_len, kernel.shape[0])):
        y[m:] += kernel[m] * x[:t_len - m]
    if x.ndim == 1 and y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    return y


def _propagated(sys, xt, i, t):
    abar, bbar = discretize(sys)
    if abar.ndim == 2:
        prod = abar ** (t - i)
        b_i = bbar
    else:
        prod = np.ones_like(abar[0])
        for k in range(i + 1, t + 1):
            prod = prod * abar[k]
        b_i = bbar[i]
    return prod * b_i * xt[i][:, None]


def token_contribution(sys: StateSpaceSystem, x, i: int, t: int, signed=False):
    """Norm of token ``i``'s share of hidden state ``t`` (0 <= i <= t < T).

    The share is ``(prod_{k=i+1..t} abar_k) * bbar_i * x_i``; an empty
    product is 1.  ``signed=True`` returns the (D, n) vector itself.
    """
    xt, _ = _as_tokens(x)
    t_len = xt.shape[0]
    _check_length(sys, t_len)
    if not 0 <= i <= t < t_len:
        raise ValueError(f"need 0 <= i <= t < {t_len}, got i={i}, t={t}")
    vec = _propagated(sys, xt, i, t)
    if signed:
        return vec
    return float(np.linalg.norm(vec.ravel()))


def bidirectional_scan(sys_fwd: StateSpaceSystem, sys_bwd: StateSpaceSystem, x) -> np.ndarray:
    """Forward scan plus the time-reversed scan of the reversed input.

    Per-step parameters of ``sys_bwd`` are indexed in reversed time.
    """
    x = np.asarray(x)
    fwd = scan(sys_fwd, x).y
    bwd = scan(sys_bwd, x[::-1]).y[::-1]
    if fwd.shape != bwd.shape:
        raise ShapeError(f"forward output {fwd.shape} and backward output {bwd.shape} differ")
    return fwd + bwd


# ---------------------------------------------------------------------------
# Decay analysis
# ---------------------------------------------------------------------------

DEFAULT_GAPS = (10, 50, 100)

DECAY_REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "DecayReport",
    "type": "object",
    "required": ["system", "length", "pairs_checked", "bound_violations",
                 "max_excess", "gap_max", "monotone", "passed"],
    "properties": {
        "system": {"type": "object"},
        "length": {"type": "integer", "minimum": 1},
        "pairs_checked": {"type": "integer", "minimum": 0},
        "bound_violations": {"type": "integer", "minimum": 0},
        "max_excess": {"type": "number"},
        "tolerance": {"type": "number", "minimum": 0},
        "gap_max": {
            "type": "object",
            "additionalProperties": {"type": ["number", "null"], "minimum": 0},
        },
        "monotone": {"type": "boolean"},
        "passed": {"type": "boolean"},
    },
}


@dataclass
class DecayReport:
    system: dict
    length: int
    pairs_checked: int
    bound_violations: int
    max_excess: float
    tolerance: float
    gap_max: dict = field(default_factory=dict)
    monotone: bool = True

    @property
    def passed(self) -> bool:
        return self.bound_violations == 0 and self.monotone

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "length": self.length,
            "pairs_checked": self.pairs_checked,
            "bound_violations": self.bound_violations,
            "max_excess": self.max_excess,
            "tolerance": self.tolerance,
            "gap_max": {str(g): v for g, v in self.gap_max.items()},
            "monotone": self.monotone,
            "passed": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def contribution_matrix(sys: StateSpaceSystem, x):
    """All pairwise contributions and Hoelder bounds.

    Returns ``(contrib, bound)``, both (T, T) with entry [i, t] defined for
    i <= t and zero elsewhere.  The transition product is evaluated in log
    space; the bound uses the spectral (max-abs) norm of the diagonal
    product times the norm of ``bbar_i * x_i``.
    """
    xt, _ = _as_tokens(x)
    t_len, d = xt.shape
    _check_length(sys, t_len)
    abar, bbar = discretize(sys)
    n = sys.state_dim
    log_a = np.broadcast_to(np.log(abar), (t_len, d, n)).reshape(t_len, -1)
    drive = (np.broadcast_to(bbar, (t_len, d, n)) * xt[:, :, None]).reshape(t_len, -1)
    cum = np.cumsum(log_a, axis=0)
    # prod over k = i+1..t of abar_k = exp(cum[t] - cum[i])
    diff = cum[None, :, :] - cum[:, None, :]
    upper = np.triu(np.ones((t_len, t_len), dtype=bool))
    prod = np.where(upper[:, :, None], np.exp(np.minimum(diff, 0.0)), 0.0)
    contrib = np.linalg.norm(prod * drive[:, None, :], axis=-1)
    bound = prod.max(axis=-1) * np.linalg.norm(drive, axis=-1)[:, None]
    return contrib, bound


def verify_decay(sys: StateSpaceSystem, x, tolerance=1e-12, gaps=DEFAULT_GAPS) -> DecayReport:
    """Check every pair (i <= t) against the Hoelder bound and tabulate decay by gap."""
    abar, _ = discretize(sys)
    rho = float(np.max(abar))
    if rho >= 1.0:
        raise InstabilityError(f"spectral radius {rho} is not below 1")
    contrib, bound = contribution_matrix(sys, x)
    t_len = contrib.shape[0]
    upper = np.triu(np.ones((t_len, t_len), dtype=bool))
    excess = np.where(upper, contrib - bound, -np.inf)
    violations = int(np.count_nonzero(excess > tolerance))
    gap = np.arange(t_len)[None, :] - np.arange(t_len)[:, None]
    gap_max = {}
    for g in gaps:
        mask = upper & (gap >= g)
        gap_max[int(g)] = float(contrib[mask].max()) if mask.any() else None
    values = [v for v in gap_max.values() if v is not None]
    monotone = all(b <= a for a, b in zip(values, values[1:]))
    system = sys.describe()
    system["spectral_radius"] = rho
    return DecayReport(system=system, length=t_len, pairs_checked=int(upper.sum()),
                       bound_violations=violations, max_excess=float(excess.max()),
                       tolerance=tolerance, gap_max=gap_max, monotone=monotone)


# ---------------------------------------------------------------------------
# Selective (input-dependent) block
# ---------------------------------------------------------------------------

@dataclass
class SelectiveParams:
    """Projections that turn a (T, D) token stream into a selective system.

    ``delta_t = softplus(w_delta @ x_t + b_delta)``, ``B_t = w_b @ x_t + b_b``,
    ``C_t = w_c @ x_t + b_c``.
    """

    a: np.ndarray        # (D, n), negative
    w_delta: np.ndarray  # (D, D)
    b_delta: np.ndarray  # (D,)
    w_b: np.ndarray      # (n, D)
    b_b: np.ndarray      # (n,)
    w_c: np.ndarray      # (n, D)
    b_c: np.ndarray      # (n,)
    discretization: str = ZOH

    def system(self, x) -> StateSpaceSystem:
        dt = np.result_type(x, np.float32)
        delta = softplus(x @ self.w_delta.astype(dt).T + self.b_delta.astype(dt))
        b = x @ self.w_b.astype(dt).T + self.b_b.astype(dt)
        c = x @ self.w_c.astype(dt).T + self.b_c.astype(dt)
        return StateSpaceSystem(a=self.a.astype(dt), b=b, c=c, delta=delta,
                                discretization=self.discretization)


@dataclass
class BiSSMParams:
    """Forward and backward selective systems with a shared output projection."""

    fwd: SelectiveParams
    bwd: SelectiveParams
    w_out: np.ndarray  # (D, D)
    b_out: np.ndarray  # (D,)


def init_selective(prng: Prng, channels: int, state_dim: int, discretization=ZOH) -> SelectiveParams:
    s = fan_in_scale(channels)
    a = -(0.5 + prng.uniform((channels, state_dim)))
    return SelectiveParams(
        a=a,
        w_delta=init_params(prng, (channels, channels), s),
        b_delta=init_params(prng, (channels,), s) - 1.0,
        w_b=init_params(prng, (state_dim, channels), s),
        b_b=init_params(prng, (state_dim,), s),
        w_c=init_params(prng, (state_dim, channels), s),
        b_c=init_params(prng, (state_dim,), s),
        discretization=discretization,
    )


def init_bi_ssm(prng: Prng, channels: int, state_dim: int = 4, discretization=ZOH,
                out_bias: float = 0.0, out_gain: float = 1.0) -> BiSSMParams:
    fwd = init_selective(prng, channels, state_dim, discretization)
    bwd = init_selective(prng, channels, state_dim, discretization)
    s = out_gain * fan_in_scale(channels)
    return BiSSMParams(fwd=fwd, bwd=bwd,
                       w_out=init_params(prng, (channels, channels), s),
                       b_out=np.full(channels, float(out_bias)))


def bi_ssm(params: BiSSMParams, seq: np.ndarray) -> np.ndarray:
    """Bidirectional selective SSM over a batch of sequences (B, T, D)."""
    if seq.ndim != 3:
        raise ShapeError(f"expected (B, T, D) sequences, got {seq.shape}")
    out = np.empty_like(seq)
    dt = seq.dtype
    w_out = params.w_out.astype(dt)
    b_out = params.b_out.astype(dt)
    for k, x in enumerate(seq):
        xr = x[::-1]
        y = scan(params.fwd.system(x), x).y + scan(params.bwd.system(xr), xr).y[::-1]
        out[k] = y @ w_out.T + b_out
    return out

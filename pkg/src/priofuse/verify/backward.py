"""Hand-derived reverse passes for the layers the gradient checks cover.

Each ``*_forward`` re-runs the library forward with the intermediates kept;
each ``*_backward`` takes the upstream gradient and returns the input
gradient plus a dict of parameter gradients keyed by the same dotted
paths that :func:`priofuse.bundle.iter_leaves` produces.
"""
from __future__ import annotations

import numpy as np

from ..layers import LN_EPS, sigmoid, softplus
from ..ssm import ZOH, discretize, StateSpaceSystem


# ---------------------------------------------------------------------------
# Elementwise and pointwise
# ---------------------------------------------------------------------------

def silu_grad(z):
    s = sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def depthwise_conv_backward(x, kernel, g):
    """Gradients of ``depthwise_conv(x, kernel)`` given upstream ``g``."""
    k = kernel.shape[-1]
    r = k // 2
    _, _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    dkernel = np.empty_like(kernel, dtype=np.result_type(x, kernel))
    dxp = np.zeros_like(xp)
    for dy in range(k):
        for dx in range(k):
            dkernel[:, dy, dx] = np.einsum("bchw,bchw->c", g, xp[:, :, dy:dy + h, dx:dx + w])
            dxp[:, :, dy:dy + h, dx:dx + w] += kernel[None, :, dy, dx, None, None] * g
    return dxp[:, :, r:r + h, r:r + w], dkernel


def pointwise_linear_backward(x, weight, g):
    dweight = np.einsum("bohw,bchw->oc", g, x)
    dbias = g.sum(axis=(0, 2, 3))
    dx = np.einsum("oc,bohw->bchw", weight, g)
    return dx, dweight, dbias


def channel_layer_norm_forward(x, gain, bias, eps=LN_EPS):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gain[None, :, None, None] + bias[None, :, None, None], (xhat, inv)


def channel_layer_norm_backward(cache, gain, g):
    xhat, inv = cache
    dgain = (g * xhat).sum(axis=(0, 2, 3))
    dbias = g.sum(axis=(0, 2, 3))
    dxhat = g * gain[None, :, None, None]
    dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# Latent projection and PSN
# ---------------------------------------------------------------------------

def latent_forward(x, params):
    z = np.einsum("oc,bchw->bohw", params.weight, x) + params.bias[None, :, None, None]
    out = z / (1.0 + np.exp(-z)) if params.activation else z
    return out, (x, z)


def latent_backward(cache, params, g):
    x, z = cache
    gz = g * silu_grad(z) if params.activation else g
    dx, dw, db = pointwise_linear_backward(x, params.weight, gz)
    return dx, {"weight": dw, "bias": db}


def psn_forward(x, params):
    cache = {"h": [x], "z": []}
    h = x
    from ..tensor import depthwise_conv

    for kern, bias in zip(params.kernels, params.conv_biases):
        z = depthwise_conv(h, kern) + bias[None, :, None, None]
        h = z / (1.0 + np.exp(-z))
        cache["z"].append(z)
        cache["h"].append(h)
    if params.use_norm:
        n, cache["ln"] = channel_layer_norm_forward(h, params.ln_gain, params.ln_bias)
    else:
        n = h
    cache["n"] = n
    out = np.einsum("oc,bchw->bohw", params.weight, n) + params.bias[None, :, None, None]
    return out, cache


def psn_backward(cache, params, g):
    grads = {}
    dn, grads["weight"], grads["bias"] = pointwise_linear_backward(cache["n"], params.weight, g)
    if params.use_norm:
        dh, grads["ln_gain"], grads["ln_bias"] = channel_layer_norm_backward(
            cache["ln"], params.ln_gain, dn)
    else:
        dh = dn
        grads["ln_gain"] = np.zeros_like(params.ln_gain)
        grads["ln_bias"] = np.zeros_like(params.ln_bias)
    for layer in reversed(range(len(params.kernels))):
        dz = dh * silu_grad(cache["z"][layer])
        grads[f"conv_biases.{layer}"] = dz.sum(axis=(0, 2, 3))
        dh, grads[f"kernels.{layer}"] = depthwise_conv_backward(
            cache["h"][layer], params.kernels[layer], dz)
    return dh, grads


# ---------------------------------------------------------------------------
# Time-invariant kernel
# ---------------------------------------------------------------------------

def lti_kernel_forward(omega, length):
    """Kernel (L,) of a single-channel LTI system ``omega`` with fields a, b, c, delta."""
    a, b, c, delta = omega.a, omega.b, omega.c, float(omega.delta)
    abar = np.exp(delta * a)
    if omega.discretization == ZOH:
        bbar = (abar - 1.0) / a * b
    else:
        bbar = delta * b
    powers = abar[None, :] ** np.arange(length)[:, None]
    kernel = powers @ (c * bbar)
    return kernel, (abar, bbar, powers)


def lti_kernel_backward(omega, cache, dkernel):
    """Chain ``dL/dK`` back to (a, b, c, delta)."""
    a, b, c, delta = omega.a, omega.b, omega.c, float(omega.delta)
    abar, bbar, powers = cache
    m = np.arange(len(dkernel))[:, None]
    weighted = dkernel[:, None] * powers             # dK_m * abar^m
    s0 = weighted.sum(axis=0)                        # sum_m dK_m abar^m
    s1 = (weighted * m).sum(axis=0)                  # sum_m m dK_m abar^m
    if omega.discretization == ZOH:
        dbbar_da = b * (delta * abar * a - (abar - 1.0)) / a ** 2
        dbbar_ddelta = b * abar
        dbbar_db = (abar - 1.0) / a
    else:
        dbbar_da = np.zeros_like(a)
        dbbar_ddelta = b
        dbbar_db = np.full_like(a, delta)
    grads = {
        "c": s0 * bbar,
        "b": c * s0 * dbbar_db,
        "a": c * (s1 * delta * bbar + s0 * dbbar_da),
        "delta": np.array(np.sum(c * (s1 * a * bbar + s0 * dbbar_ddelta))),
    }
    return grads


def causal_conv_backward(x, kernel, gy):
    """For ``y[t, d] = sum_m K[m] x[t - m, d]``: returns (dx, dK)."""
    t_len = x.shape[0]
    dk = np.zeros_like(kernel)
    dx = np.zeros_like(x)
    for m in range(min(t_len, len(kernel))):
        dk[m] = np.sum(gy[m:] * x[:t_len - m])
        dx[:t_len - m] += kernel[m] * gy[m:]
    return dx, dk


def omega_system(omega) -> StateSpaceSystem:
    return StateSpaceSystem(a=omega.a, b=omega.b, c=omega.c, delta=float(omega.delta),
                            discretization=omega.discretization)


# ---------------------------------------------------------------------------
# Selective scan (one direction, one sequence)
# ---------------------------------------------------------------------------

def selective_forward(p, x):
    """Run one selective direction over x (T, D) keeping every intermediate."""
    zd = x @ p.w_delta.T + p.b_delta
    delta = softplus(zd)
    bt = x @ p.w_b.T + p.b_b
    ct = x @ p.w_c.T + p.b_c
    sys = StateSpaceSystem(a=p.a, b=bt, c=ct, delta=delta, discretization=p.discretization)
    abar, bbar = discretize(sys)
    t_len, d = x.shape
    n = p.a.shape[-1]
    states = np.empty((t_len, d, n))
    h = np.zeros((d, n))
    for t in range(t_len):
        h = abar[t] * h + bbar[t] * x[t][:, None]
        states[t] = h
    y = np.einsum("tdn,tn->td", states, ct)
    return y, dict(x=x, zd=zd, delta=delta, bt=bt, ct=ct, abar=abar, bbar=bbar, states=states)


def selective_backward(p, cache, gy):
    """Backpropagation through time for :func:`selective_forward`."""
    x, zd, delta, bt, ct = cache["x"], cache["zd"], cache["delta"], cache["bt"], cache["ct"]
    abar, bbar, states = cache["abar"], cache["bbar"], cache["states"]
    a = np.broadcast_to(p.a, abar.shape[1:])
    t_len, d = x.shape
    n = a.shape[-1]
    dct = np.einsum("td,tdn->tn", gy, states)
    dh_direct = gy[:, :, None] * ct[:, None, :]
    dabar = np.zeros_like(abar)
    dbbar = np.zeros_like(bbar)
    dx = np.zeros_like(x)
    carry = np.zeros((d, n))
    for t in reversed(range(t_len)):
        dh = dh_direct[t] + carry
        prev = states[t - 1] if t > 0 else np.zeros((d, n))
        dabar[t] = dh * prev
        dbbar[t] = dh * x[t][:, None]
        dx[t] += (dh * bbar[t]).sum(axis=1)
        carry = dh * abar[t]
    dl = delta[:, :, None]
    if p.discretization == ZOH:
        # bbar = (abar - 1) / a * b
        dabar_total = dabar + dbbar * bt[:, None, :] / a
        dbt = (dbbar * (abar - 1.0) / a).sum(axis=1)
        da_direct = -dbbar * (abar - 1.0) * bt[:, None, :] / a ** 2
        ddelta_direct = 0.0
    else:
        # bbar = delta * b
        dabar_total = dabar
        dbt = (dbbar * dl).sum(axis=1)
        da_direct = 0.0
        ddelta_direct = (dbbar * bt[:, None, :]).sum(axis=2)
    # abar = exp(delta * a)
    dexp = dabar_total * abar
    ddelta = (dexp * a).sum(axis=2) + ddelta_direct
    da = (dexp * dl + da_direct).sum(axis=0)
    if p.a.shape[0] == 1 and da.shape[0] != 1:
        da = da.sum(axis=0, keepdims=True)
    dzd = ddelta * sigmoid(zd)
    grads = {
        "a": da,
        "w_delta": dzd.T @ x, "b_delta": dzd.sum(axis=0),
        "w_b": dbt.T @ x, "b_b": dbt.sum(axis=0),
        "w_c": dct.T @ x, "b_c": dct.sum(axis=0),
    }
    dx = dx + dzd @ p.w_delta + dbt @ p.w_b + dct @ p.w_c
    return dx, grads

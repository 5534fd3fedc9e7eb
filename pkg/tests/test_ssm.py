import math

import jsonschema
import numpy as np
import pytest

from priofuse import ssm
from priofuse.ssm import (DECAY_REPORT_SCHEMA, EULER_B, ZOH, InstabilityError, StateSpaceSystem,
                          UnsupportedModeError, apply_kernel, bidirectional_scan, conv_kernel,
                          discretize, scan, token_contribution, verify_decay)
from priofuse.tensor import Prng, ShapeError


def loop_scan(a, b, c, delta, x, mode):
    """Per-channel, per-state-component scalar recurrence on Python floats.

    a: (D, n); b, c: (T, n); delta: (T,); x: (T, D).
    """
    t_len, d = x.shape
    n = a.shape[1]
    y = np.zeros((t_len, d))
    for ch in range(d):
        for j in range(n):
            h = 0.0
            for t in range(t_len):
                abar = math.exp(delta[t] * a[ch, j])
                if mode == ZOH:
                    bbar = (abar - 1.0) / a[ch, j] * b[t, j]
                else:
                    bbar = delta[t] * b[t, j]
                h = abar * h + bbar * x[t, ch]
                y[t, ch] += c[t, j] * h
    return y


def scalar_system(abar=0.5, bbar=1.0, c=1.0):
    # EulerB with delta = 1 gives abar = e^a and bbar = b directly
    return StateSpaceSystem(a=np.array([math.log(abar)]), b=np.array([bbar]), c=np.array([c]),
                            delta=1.0, discretization=EULER_B)


# -- discretization --------------------------------------------------------

def test_zoh_closed_forms():
    sys = StateSpaceSystem(a=np.array([-1.0]), b=np.array([1.0]), c=np.array([1.0]),
                           delta=math.log(2.0))
    abar, bbar = discretize(sys)
    assert np.isclose(abar.item(), 0.5) and np.isclose(bbar.item(), 0.5)


def test_euler_b_input_matrix():
    sys = StateSpaceSystem(a=np.array([-2.0]), b=np.array([3.0]), c=np.array([1.0]), delta=0.25,
                           discretization=EULER_B)
    abar, bbar = discretize(sys)
    assert np.isclose(abar.item(), math.exp(-0.5)) and np.isclose(bbar.item(), 0.75)


def test_small_step_limit():
    sys = StateSpaceSystem(a=np.array([-3.0]), b=np.array([1.0]), c=np.array([1.0]), delta=1e-8)
    abar, bbar = discretize(sys)
    assert abs(abar.item() - 1.0) <= 1e-6 and abs(bbar.item()) <= 1e-6


def test_nonnegative_a_is_unstable():
    with pytest.raises(InstabilityError):
        StateSpaceSystem(a=np.array([-1.0, 0.0]), b=np.ones(2), c=np.ones(2))


def test_nonpositive_delta_rejected():
    with pytest.raises(ValueError):
        StateSpaceSystem(a=np.array([-1.0]), b=np.ones(1), c=np.ones(1), delta=0.0)


def test_unknown_discretization():
    with pytest.raises(ValueError):
        StateSpaceSystem(a=np.array([-1.0]), b=np.ones(1), c=np.ones(1), discretization="bilinear")


# -- scan ------------------------------------------------------------------

def test_three_step_hand_example():
    y = scan(scalar_system(), np.array([1.0, 0.0, 0.0])).y
    assert np.allclose(y, [1.0, 0.5, 0.25])


def test_zero_input_zero_output():
    sys = StateSpaceSystem(a=-np.ones(3), b=np.ones(3), c=np.ones(3))
    assert np.all(scan(sys, np.zeros((7, 2))).y == 0)


@pytest.mark.parametrize("mode", [ZOH, EULER_B])
def test_selective_scan_matches_loop_oracle(mode):
    p = Prng(21)
    t_len, d, n = 32, 3, 4
    a = -(0.1 + p.uniform((d, n)))
    b = p.uniform((t_len, n), -1, 1)
    c = p.uniform((t_len, n), -1, 1)
    delta = 0.05 + p.uniform(t_len)
    x = p.uniform((t_len, d), -1, 1)
    sys = StateSpaceSystem(a=a, b=b, c=c, delta=delta, discretization=mode)
    assert sys.mode == "selective"
    assert np.max(np.abs(scan(sys, x).y - loop_scan(a, b, c, delta, x, mode))) <= 1e-12


def test_scan_length_mismatch():
    sys = StateSpaceSystem(a=-np.ones(2), b=np.ones((5, 2)), c=np.ones((5, 2)), delta=np.ones(5))
    with pytest.raises(ShapeError):
        scan(sys, np.zeros(4))


def test_scan_returns_states_and_final():
    sys = scalar_system()
    res = scan(sys, np.array([1.0, 1.0]), return_states=True)
    assert np.allclose(res.states[:, 0, 0], [1.0, 1.5])
    assert np.allclose(res.h_final, 1.5)


# -- convolution form ------------------------------------------------------

def test_geometric_kernel():
    assert np.allclose(conv_kernel(scalar_system(), 3)[:, 0], [1.0, 0.5, 0.25])


def test_impulse_response_is_kernel():
    k = np.array([1.0, 0.3, -0.2, 0.05])
    x = np.zeros(4)
    x[0] = 1.0
    assert np.array_equal(apply_kernel(x, k), k)


@pytest.mark.parametrize("seed", range(5))
def test_conv_equals_scan(seed):
    p = Prng(seed)
    n = 8
    sys = StateSpaceSystem(a=-(0.05 + 2 * p.uniform(n)), b=p.uniform(n, -1, 1),
                           c=p.uniform(n, -1, 1), delta=0.1 + p.uniform(1)[0],
                           discretization=(ZOH, EULER_B)[seed % 2])
    x = p.uniform((64, 2), -1, 1)
    ref = scan(sys, x).y
    got = apply_kernel(x, conv_kernel(sys, 64))
    assert np.max(np.abs(got - ref)) <= 1e-9 * np.max(np.abs(ref))


def test_conv_kernel_rejects_selective():
    sys = StateSpaceSystem(a=-np.ones(2), b=np.ones((3, 2)), c=np.ones((3, 2)), delta=np.ones(3))
    with pytest.raises(UnsupportedModeError):
        conv_kernel(sys, 3)


# -- contributions ---------------------------------------------------------

def test_geometric_contribution():
    x = np.zeros(10)
    x[2] = 1.0
    for t in range(2, 10):
        assert np.isclose(token_contribution(scalar_system(), x, 2, t), 0.5 ** (t - 2))


def test_contribution_empty_product():
    sys = scalar_system(0.5, 3.0)
    assert np.isclose(token_contribution(sys, np.array([0.0, 2.0]), 1, 1), 6.0)


def test_contributions_sum_to_state():
    p = Prng(33)
    t_len = 20
    sys = StateSpaceSystem(a=-(0.1 + p.uniform((2, 4))), b=p.uniform((t_len, 4), -1, 1),
                           c=p.uniform((t_len, 4), -1, 1), delta=0.1 + p.uniform(t_len))
    x = p.uniform((t_len, 2), -1, 1)
    states = scan(sys, x, return_states=True).states
    for t in (0, 7, t_len - 1):
        total = sum(token_contribution(sys, x, i, t, signed=True) for i in range(t + 1))
        assert np.max(np.abs(total - states[t])) <= 1e-10


@pytest.mark.parametrize("i, t", [(-1, 2), (3, 2), (0, 5)])
def test_contribution_index_errors(i, t):
    with pytest.raises(ValueError):
        token_contribution(scalar_system(), np.zeros(5), i, t)


# -- decay -----------------------------------------------------------------

def test_constant_decay_at_gap_100():
    x = Prng(4).uniform(256, -1, 1)
    rep = verify_decay(scalar_system(0.9), x)
    assert rep.passed
    assert rep.gap_max[100] <= 0.9 ** 100
    assert rep.bound_violations == 0


def test_decay_report_schema_and_json():
    p = Prng(5)
    sys = StateSpaceSystem(a=-(0.1 + p.uniform((2, 3))), b=p.uniform((50, 3), -1, 1),
                           c=p.uniform((50, 3), -1, 1), delta=0.1 + p.uniform(50))
    rep = verify_decay(sys, p.uniform((50, 2), -1, 1))
    jsonschema.validate(rep.to_dict(), DECAY_REPORT_SCHEMA)
    assert rep.gap_max[100] is None  # no pair that far apart in 50 steps
    assert '"bound_violations": 0' in rep.to_json()


def test_contribution_matrix_matches_direct():
    p = Prng(6)
    sys = StateSpaceSystem(a=-(0.1 + p.uniform((1, 2))), b=p.uniform((12, 2), -1, 1),
                           c=p.uniform((12, 2), -1, 1), delta=0.1 + p.uniform(12))
    x = p.uniform((12, 1), -1, 1)
    contrib, bound = ssm.contribution_matrix(sys, x)
    for i, t in ((0, 0), (3, 9), (5, 11)):
        assert np.isclose(contrib[i, t], token_contribution(sys, x, i, t), rtol=1e-12)
    assert np.all(contrib <= bound + 1e-12)


# -- bidirectional ---------------------------------------------------------

def test_bidirectional_palindrome():
    sys = StateSpaceSystem(a=-np.array([0.5, 1.5]), b=np.ones(2), c=np.array([1.0, -0.5]))
    x = np.array([1.0, 3.0, -2.0, 3.0, 1.0])
    y = bidirectional_scan(sys, sys, x)
    assert np.allclose(y, y[::-1])


def test_bidirectional_zero_backward_branch():
    fwd = StateSpaceSystem(a=-np.ones(2), b=np.ones(2), c=np.ones(2))
    bwd = StateSpaceSystem(a=-np.ones(2), b=np.ones(2), c=np.zeros(2))
    x = Prng(7).uniform(9)
    assert np.allclose(bidirectional_scan(fwd, bwd, x), scan(fwd, x).y)


def test_bidirectional_composition():
    p = Prng(8)
    f = StateSpaceSystem(a=-(0.1 + p.uniform(3)), b=p.uniform(3), c=p.uniform(3))
    b = StateSpaceSystem(a=-(0.1 + p.uniform(3)), b=p.uniform(3), c=p.uniform(3))
    x = p.uniform((11, 2))
    ref = scan(f, x).y + np.flip(scan(b, np.flip(x, 0)).y, 0)
    assert np.allclose(bidirectional_scan(f, b, x), ref, atol=1e-14)


# -- selective block -------------------------------------------------------

def test_selective_params_build_expected_system():
    params = ssm.init_selective(Prng(9), 3, 4)
    x = Prng(10).uniform((6, 3), -1, 1)
    sys = params.system(x)
    zd = x @ params.w_delta.T + params.b_delta
    assert np.allclose(sys.delta, np.log1p(np.exp(zd)))
    assert np.allclose(sys.b, x @ params.w_b.T + params.b_b)
    assert sys.mode == "selective"


def test_bi_ssm_shape_and_errors():
    params = ssm.init_bi_ssm(Prng(11), 3)
    out = ssm.bi_ssm(params, Prng(12).uniform((2, 9, 3)))
    assert out.shape == (2, 9, 3) and np.all(np.isfinite(out))
    with pytest.raises(ShapeError):
        ssm.bi_ssm(params, np.zeros((9, 3)))

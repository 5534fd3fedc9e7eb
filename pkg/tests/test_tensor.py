import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from priofuse import tensor
from priofuse.tensor import (HEADER_SIZE, FormatError, KernelError, Prng, ShapeError,
                             depthwise_conv, feature_map, flatten_spatial, global_avg_pool,
                             init_params, read_tensor, unflatten_spatial, write_tensor)


# -- oracles ---------------------------------------------------------------

def conv_loop(x, kernel):
    """Six nested loops, zero padding, no kernel flip."""
    b_, c_, h_, w_ = x.shape
    k = kernel.shape[-1]
    r = k // 2
    out = np.zeros_like(x)
    for b in range(b_):
        for c in range(c_):
            for y in range(h_):
                for xx in range(w_):
                    acc = 0.0
                    for dy in range(k):
                        for dx in range(k):
                            yy, xs = y + dy - r, xx + dx - r
                            if 0 <= yy < h_ and 0 <= xs < w_:
                                acc += kernel[c, dy, dx] * x[b, c, yy, xs]
                    out[b, c, y, xx] = acc
    return out


def splitmix64_reference(seed, n):
    """Textbook SplitMix64 on Python ints."""
    mask = (1 << 64) - 1
    state = seed
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append(z ^ (z >> 31))
    return out


# -- feature maps ----------------------------------------------------------

def test_feature_map_accepts_rank4_float():
    x = feature_map(np.zeros((1, 2, 3, 4), dtype=np.float32))
    assert x.shape == (1, 2, 3, 4)


def test_feature_map_rejects_wrong_rank_and_empty_axes():
    with pytest.raises(ShapeError):
        feature_map(np.zeros((2, 3, 4)))
    with pytest.raises(ShapeError):
        feature_map(np.zeros((1, 0, 2, 2)))


def test_feature_map_promotes_integers_and_rejects_other_dtypes():
    assert feature_map(np.zeros((1, 1, 2, 2), dtype=np.int32)).dtype == np.float64
    with pytest.raises(TypeError):
        feature_map(np.zeros((1, 1, 2, 2)), dtype=np.float16)


def test_feature_map_rejects_non_finite():
    x = np.zeros((1, 1, 2, 2))
    x[0, 0, 1, 1] = np.nan
    with pytest.raises(ValueError):
        feature_map(x)


# -- prng ------------------------------------------------------------------

def test_prng_matches_textbook_splitmix64():
    for seed in (0, 1, 12345, 2 ** 64 - 1):
        got = Prng(seed).next_u64(5)
        assert [int(v) for v in got] == splitmix64_reference(seed, 5)


def test_prng_known_first_output_seed0():
    assert int(Prng(0).next_u64(1)[0]) == 0xE220A8397B1DCDAF


def test_prng_stream_is_split_invariant():
    a = Prng(9)
    first = np.concatenate([a.next_u64(3), a.next_u64(4)])
    assert np.array_equal(first, Prng(9).next_u64(7))


def test_prng_uniform_range():
    u = Prng(3).random((1000,))
    assert u.min() >= 0.0 and u.max() < 1.0


def test_spawn_gives_distinct_streams():
    p = Prng(5)
    assert not np.array_equal(p.spawn(1).random(8), p.spawn(2).random(8))
    assert np.array_equal(p.spawn(1).random(8), Prng(5).spawn(1).random(8))


def test_init_params_determinism_and_range():
    a = init_params(Prng(1), (4, 5), 0.1)
    b = init_params(Prng(1), (4, 5), 0.1)
    c = init_params(Prng(2), (4, 5), 0.1)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.all(np.abs(a) <= 0.1)


def test_init_params_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        init_params(Prng(0), (2,), 0.0)


# -- depthwise conv --------------------------------------------------------

def test_conv_all_ones_centre_and_corner():
    out = depthwise_conv(np.ones((1, 1, 3, 3)), np.ones((1, 3, 3)))
    assert out[0, 0, 1, 1] == 9.0
    assert out[0, 0, 0, 0] == 4.0


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 2, 5, 5))
    kern = rng.standard_normal((2, 3, 3))
    ref = conv_loop(x, kern)
    assert np.max(np.abs(depthwise_conv(x, kern) - ref)) <= 1e-6 * np.max(np.abs(ref))


def test_conv_is_cross_correlation_not_convolution():
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = 1.0
    kern = np.arange(9.0).reshape(1, 3, 3)
    # an impulse picks up the kernel flipped under cross-correlation
    assert np.array_equal(depthwise_conv(x, kern)[0, 0], kern[0, ::-1, ::-1])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 8), st.integers(1, 8),
       st.sampled_from([1, 3, 5]), st.integers(0, 2 ** 32 - 1))
def test_conv_identity_kernel_property(b, c, h, w, k, seed):
    x = Prng(seed).uniform((b, c, h, w), -1, 1)
    kern = np.zeros((c, k, k))
    kern[:, k // 2, k // 2] = 1.0
    assert np.array_equal(depthwise_conv(x, kern), x)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(2, 8), st.integers(2, 8), st.integers(0, 2 ** 32 - 1))
def test_conv_linearity_f32(c, h, w, seed):
    p = Prng(seed)
    x = p.uniform((1, c, h, w), -1, 1).astype(np.float32)
    y = p.uniform((1, c, h, w), -1, 1).astype(np.float32)
    kern = p.uniform((c, 3, 3), -1, 1).astype(np.float32)
    a, b = np.float32(1.5), np.float32(-0.75)
    lhs = depthwise_conv(a * x + b * y, kern)
    rhs = a * depthwise_conv(x, kern) + b * depthwise_conv(y, kern)
    assert np.max(np.abs(lhs - rhs)) <= 1e-6 * max(np.max(np.abs(rhs)), 1e-30) + 1e-7


@pytest.mark.parametrize("strip", [1, 50, 333])
def test_conv_row_strips_are_bitwise_identical(monkeypatch, strip):
    x = Prng(4).uniform((2, 3, 17, 11), -1, 1)
    kern = Prng(5).uniform((3, 5, 5), -1, 1)
    whole = depthwise_conv(x, kern)
    monkeypatch.setattr(tensor, "CONV_STRIP_ELEMENTS", strip)
    assert depthwise_conv(x, kern).tobytes() == whole.tobytes()


def test_conv_even_kernel_rejected():
    with pytest.raises(KernelError):
        depthwise_conv(np.zeros((1, 1, 4, 4)), np.zeros((1, 2, 2)))


def test_conv_channel_mismatch_rejected():
    with pytest.raises(ShapeError):
        depthwise_conv(np.zeros((1, 2, 4, 4)), np.zeros((3, 3, 3)))


# -- pooling and flattening ------------------------------------------------

def test_gap_constants():
    assert global_avg_pool([np.full((1, 1, 2, 2), 5.0)])[0, 0, 0, 0] == 5.0
    maps = [np.full((1, 1, 3, 3), v) for v in (1.0, 2.0, 3.0)]
    assert global_avg_pool(maps)[0, 0, 0, 0] == 2.0


def test_gap_equals_mean_of_all_values():
    rng = np.random.default_rng(1)
    maps = [rng.random((1, 1, 4, 4)) for _ in range(3)]
    total = sum(float(v) for m in maps for v in m.ravel()) / 48
    assert abs(global_avg_pool(maps)[0, 0, 0, 0] - total) <= 1e-12


def test_gap_errors():
    with pytest.raises(ShapeError):
        global_avg_pool([])
    with pytest.raises(ShapeError):
        global_avg_pool([np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 2))])


def test_flatten_row_major():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert flatten_spatial(x)[0, :, 0].tolist() == [1.0, 2.0, 3.0, 4.0]
    y = np.arange(8.0).reshape(1, 2, 2, 2)
    assert flatten_spatial(y)[0, 0].tolist() == [y[0, 0, 0, 0], y[0, 1, 0, 0]]


def test_flatten_unflatten_bijection():
    x = np.random.default_rng(2).random((2, 3, 4, 5))
    assert np.array_equal(unflatten_spatial(flatten_spatial(x), 4, 5), x)
    with pytest.raises(ShapeError):
        unflatten_spatial(flatten_spatial(x), 5, 5)


# -- tensor file format ----------------------------------------------------

@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_tensor_roundtrip_bitwise(dtype):
    x = np.random.default_rng(3).standard_normal((2, 3, 4, 5)).astype(dtype)
    x[0, 0, 0, 0] = -0.0
    back = read_tensor(write_tensor(x))
    assert back.dtype == x.dtype and back.tobytes() == x.tobytes()
    assert write_tensor(back) == write_tensor(x)


def test_tensor_size_for_single_f32():
    # 4 magic + 3 one-byte fields + 4 * 4 dims = 23-byte header, + one 4-byte value
    buf = write_tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
    assert HEADER_SIZE == 23
    assert len(buf) == 27
    assert buf[:4] == b"DEPF"
    assert struct.unpack("<f", buf[23:])[0] == 1.0


def test_tensor_header_layout():
    buf = write_tensor(np.zeros((2, 3, 4, 5)))
    magic, version, dtype, ndim, *dims = struct.unpack("<4sBBB4I", buf[:23])
    assert (magic, version, dtype, ndim, dims) == (b"DEPF", 1, 1, 4, [2, 3, 4, 5])


@pytest.mark.parametrize("mutate, offset", [
    (lambda b: b"XXXX" + b[4:], 0),
    (lambda b: b[:4] + bytes([2]) + b[5:], 4),
    (lambda b: b[:5] + bytes([7]) + b[6:], 5),
    (lambda b: b[:6] + bytes([3]) + b[7:], 6),
])
def test_tensor_header_errors_carry_offset(mutate, offset):
    buf = write_tensor(np.zeros((1, 1, 2, 2), dtype=np.float32))
    with pytest.raises(FormatError) as err:
        read_tensor(mutate(buf))
    assert err.value.offset == offset


def test_tensor_truncated_and_trailing():
    buf = write_tensor(np.zeros((1, 1, 2, 2), dtype=np.float32))
    with pytest.raises(FormatError):
        read_tensor(buf[:-1])
    with pytest.raises(FormatError):
        read_tensor(buf[:10])
    with pytest.raises(FormatError):
        read_tensor(buf + b"\0")

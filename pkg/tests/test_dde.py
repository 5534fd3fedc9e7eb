import warnings

import numpy as np
import pytest

from priofuse import dde
from priofuse.bundle import iter_leaves, load_bundle, save_bundle
from priofuse.layers import channel_layer_norm
from priofuse.tensor import Prng, ShapeError, depthwise_conv


def rand_image(seed, shape=(1, 3, 16, 16), lo=0.0, hi=1.0):
    return Prng(seed).uniform(shape, lo, hi)


# -- cross-scale serialization ---------------------------------------------

def test_serialize_single_pixel_example():
    a = np.full((1, 2, 1, 1), 0.5)
    b = np.full((1, 2, 1, 1), -1.0)
    fg = np.array([0.25, 2.0]).reshape(1, 2, 1, 1)
    seq_a, seq_b = dde.cross_scale_serialize(a, b, fg=fg)
    assert seq_a.shape == (1, 2, 2)
    assert np.allclose(seq_a, [[[0.75, 2.5], [0.75, 2.5]]])
    assert np.allclose(seq_b, [[[-0.75, 1.0], [-0.75, 1.0]]])


def test_serialize_order_and_reversal():
    f = np.arange(6.0).reshape(1, 1, 2, 3)
    fg = np.full((1, 1, 1, 1), 10.0)
    (seq,) = dde.cross_scale_serialize(f, fg=fg)
    assert seq[0, :, 0].tolist() == [10, 11, 12, 13, 14, 15, 15, 14, 13, 12, 11, 10]


def test_serialize_shape_errors():
    with pytest.raises(ShapeError):
        dde.cross_scale_serialize(np.zeros((1, 1, 2, 2)), fg=np.zeros((1, 1, 2, 2)))
    with pytest.raises(ShapeError):
        dde.cross_scale_serialize(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)),
                                  fg=np.zeros((1, 1, 1, 1)))


def test_fold_bidirectional_of_palindromic_sequence():
    half = np.random.default_rng(0).random((1, 5, 2))
    y = np.concatenate([half, half[:, ::-1]], axis=1)
    assert np.allclose(dde.fold_bidirectional(y), half)


# -- CSWM ------------------------------------------------------------------

def test_unit_branches_give_constant_gate():
    params = dde.identity_cswm(3, gate=3.0)
    ll = rand_image(1, (1, 3, 6, 7))
    gate = dde.cswm_gate(ll, params)
    assert np.allclose(gate, 3.0, atol=1e-12)
    assert np.allclose(dde.cswm_enhance(ll, params), 3.0 * ll, atol=1e-12)


def test_zero_ll_stays_zero():
    params = dde.init_cswm(Prng(2), 3)
    assert np.all(dde.cswm_enhance(np.zeros((1, 3, 5, 5)), params) == 0)


def test_frozen_gate_is_homogeneous():
    params = dde.init_cswm(Prng(3), 3)
    ll = rand_image(4, (1, 3, 8, 8))
    gate = dde.cswm_gate(ll, params)
    a = dde.cswm_enhance(2.5 * ll, params, gate=gate)
    assert np.allclose(a, 2.5 * dde.cswm_enhance(ll, params, gate=gate), rtol=1e-12)


def test_gate_is_centred_near_one_at_init():
    gate = dde.cswm_gate(rand_image(5, (1, 3, 8, 8)), dde.init_cswm(Prng(6), 3))
    assert np.all(np.abs(gate - 1.0) < 0.2)


def test_gate_warning_on_large_magnitude():
    params = dde.identity_cswm(1, gate=3e3)
    with pytest.warns(RuntimeWarning):
        dde.cswm_gate(np.ones((1, 1, 4, 4)), params)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        dde.cswm_gate(np.ones((1, 1, 4, 4)), dde.identity_cswm(1, gate=3.0))


@pytest.mark.parametrize("ks", dde.KERNEL_COMBINATIONS)
def test_kernel_combinations_accepted(ks):
    params = dde.init_cswm(Prng(7), 2, ks)
    assert [k.shape[-1] for k in params.kernels] == list(ks)
    assert dde.cswm_enhance(rand_image(8, (1, 2, 5, 5)), params).shape == (1, 2, 5, 5)


@pytest.mark.parametrize("ks", [(3, 4, 7), (5, 3, 7), (3, 3, 5)])
def test_bad_kernel_sizes_rejected(ks):
    with pytest.raises(ValueError):
        dde.init_cswm(Prng(0), 2, ks)


def test_hf_affine_defaults_to_identity():
    bands = tuple(rand_image(s, (1, 3, 4, 4), -1, 1) for s in range(3))
    out = dde.hf_affine(bands, dde.init_cswm(Prng(0), 3))
    for a, b in zip(out, bands):
        assert np.array_equal(a, b)


# -- SRN / FDR -------------------------------------------------------------

def test_identity_srn():
    x = rand_image(9, (1, 3, 5, 6), -2, 2)
    assert np.allclose(dde.srn(x, dde.identity_srn(3)), x, atol=1e-15)


def test_srn_composition_with_switches_on():
    p = dde.init_srn(Prng(10), 3, rectify=True, normalize=True)
    x = rand_image(11, (1, 3, 5, 5), -1, 1)
    h = np.maximum(depthwise_conv(x, p.k1) + p.b1[None, :, None, None], 0.0)
    h = depthwise_conv(h, p.k2) + p.b2[None, :, None, None]
    h = channel_layer_norm(h, p.ln_gain, p.ln_bias)
    ref = np.einsum("oc,bchw->bohw", p.weight, h) + p.bias[None, :, None, None]
    assert np.allclose(dde.srn(x, p), ref, atol=1e-12)


@pytest.mark.parametrize("dtype, tol", [(np.float64, 1e-10), (np.float32, 1e-5)])
def test_fdr_identity_roundtrip(dtype, tol):
    x = rand_image(12, (1, 3, 9, 10)).astype(dtype)
    out = dde.fdr_recover(x, dde.identity_srn(3), dde.identity_srn(3))
    assert out.dtype == dtype
    assert np.max(np.abs(out - x)) <= tol


# -- pipeline --------------------------------------------------------------

@pytest.mark.parametrize("basis", ["haar", "sym2"])
@pytest.mark.parametrize("shape", [(1, 3, 32, 32), (2, 3, 17, 22)])
def test_identity_pipeline_reproduces_input(basis, shape):
    x = rand_image(13, shape)
    out = dde.dde_pipeline(x, dde.identity_dde(3, 2, basis=basis))
    assert out.shape == x.shape
    assert np.max(np.abs(out - x)) <= 1e-10


def test_dark_image_brightens_with_gate_three():
    x = rand_image(14, (1, 3, 16, 16), 0.0, 0.1)
    out = dde.dde_pipeline(x, dde.identity_dde(3, 1, gate=3.0))
    assert out.mean() > 2.5 * x.mean()


def test_random_pipeline_is_deterministic_and_finite():
    x = rand_image(15, (1, 3, 20, 24)).astype(np.float32)
    a = dde.dde_pipeline(x, dde.init_dde(Prng(16), 3))
    b = dde.dde_pipeline(x, dde.init_dde(Prng(16), 3))
    assert a.dtype == np.float32 and a.shape == x.shape
    assert np.all(np.isfinite(a)) and a.tobytes() == b.tobytes()
    c = dde.dde_pipeline(x, dde.init_dde(Prng(17), 3))
    assert not np.array_equal(a, c)


# -- bundles ---------------------------------------------------------------

def test_bundle_roundtrip_restores_every_leaf(tmp_path):
    params = dde.init_dde(Prng(18), 3, 2, (3, 5, 9))
    save_bundle(params, tmp_path, {"kind": "dde"})
    template = dde.init_dde(Prng(99), 3, 2, (3, 5, 9))
    load_bundle(tmp_path, template)
    for (pa, va), (pb, vb) in zip(iter_leaves(params), iter_leaves(template)):
        assert pa == pb
        if isinstance(va, np.ndarray):
            assert va.shape == vb.shape and np.array_equal(va, vb)
        else:
            assert va == vb
    x = rand_image(19, (1, 3, 12, 12))
    assert np.array_equal(dde.dde_pipeline(x, params), dde.dde_pipeline(x, template))


def test_bundle_rejects_foreign_tree(tmp_path):
    save_bundle(dde.init_dde(Prng(0), 3, 2), tmp_path, {"kind": "dde"})
    with pytest.raises(KeyError):
        load_bundle(tmp_path, dde.init_dde(Prng(0), 3, 1))

import json
import time

import numpy as np
import pytest

from priofuse.cli import main
from priofuse.config import ConfigError, RunConfig, load_config
from priofuse.imageio import (UnsupportedFormatError, decode_image, encode_image, quantize,
                              read_image, write_image)
from priofuse.tensor import FormatError, Prng, read_tensor, write_tensor


def ppm_bytes(h, w, seed=0, lo=0, hi=256):
    raster = np.random.default_rng(seed).integers(lo, hi, (h, w, 3), dtype=np.uint8)
    return b"P6\n%d %d\n255\n" % (w, h) + raster.tobytes(), raster


# -- images ----------------------------------------------------------------

def test_decode_scales_by_255():
    buf, raster = ppm_bytes(3, 4)
    img = decode_image(buf)
    assert img.shape == (1, 3, 3, 4)
    assert np.array_equal(img[0].transpose(1, 2, 0) * 255.0, raster.astype(float))


def test_header_comments_and_whitespace():
    buf = b"P5 # grey\n# another\n2\t1\n255\n" + bytes([0, 255])
    img = decode_image(buf)
    assert img.shape == (1, 1, 1, 2) and img[0, 0, 0].tolist() == [0.0, 1.0]


def test_encode_decode_roundtrip_bytes():
    buf, _ = ppm_bytes(5, 7, seed=1)
    assert encode_image(decode_image(buf)) == buf


def test_quantize_clamps_and_rounds_half_to_even():
    # 0.5/255 and 1.5/255 sit exactly on .5 boundaries after scaling
    x = np.array([-0.2, 0.5 / 255, 1.5 / 255, 2.5 / 255, 1.7])
    assert quantize(x).tolist() == [0, 0, 2, 2, 255]


@pytest.mark.parametrize("buf, offset", [
    (b"P3\n1 1\n255\n\0\0\0", 0),
    (b"P6\n1 x\n255\n\0\0\0", 5),
    (b"P6\n0 1\n255\n", 3),
    (b"P6\n1 1\n255\n\0\0", 13),    # end of file
    (b"P6\n1 1\n255\n\0\0\0\0", 14),  # first surplus byte
    (b"P6\n1 1", 6),
])
def test_decode_errors_carry_offsets(buf, offset):
    with pytest.raises(FormatError) as err:
        decode_image(buf)
    assert err.value.offset == offset


def test_sixteen_bit_unsupported():
    with pytest.raises(UnsupportedFormatError) as err:
        decode_image(b"P6\n1 1\n65535\n" + bytes(6))
    assert err.value.offset == 7


def test_write_read_file(tmp_path):
    x = np.random.default_rng(2).random((1, 1, 4, 4))
    path = tmp_path / "g.pgm"
    write_image(path, x)
    assert np.max(np.abs(read_image(path) - x)) <= 0.5 / 255 + 1e-12
    assert not list(tmp_path.glob("*.tmp*"))


def test_encode_rejects_bad_shapes():
    with pytest.raises(ValueError):
        encode_image(np.zeros((2, 3, 2, 2)))
    with pytest.raises(ValueError):
        encode_image(np.zeros((1, 2, 2, 2)))


# -- config ----------------------------------------------------------------

def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.variant == "d" and cfg.kernel_sizes == [3, 5, 7] and cfg.dtype == "f32"


def test_file_then_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 5, "levels": 3, "basis": "sym2"}))
    cfg = load_config(path, {"seed": 9, "basis": None})
    assert (cfg.seed, cfg.levels, cfg.basis) == (9, 3, "sym2")


@pytest.mark.parametrize("data", [
    {"sead": 1}, {"seed": -1}, {"seed": True}, {"levels": 0}, {"basis": "db4"},
    {"kernel_sizes": [3, 4]}, {"kernel_sizes": [5, 3]}, {"variant": "z"},
    {"discretization": "bilinear"}, {"dropout": 1.0}, {"dtype": "f16"}, {"state_dim": 0},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_invalid_json_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


# -- CLI: enhance ----------------------------------------------------------

@pytest.fixture
def image_file(tmp_path):
    buf, _ = ppm_bytes(64, 80, seed=3)
    path = tmp_path / "in.ppm"
    path.write_bytes(buf)
    return path


def test_enhance_identity_reproduces_input(tmp_path, image_file):
    outs = []
    for seed in (1, 2):
        out = tmp_path / f"o{seed}"
        t0 = time.perf_counter()
        rc = main(["enhance", str(image_file), "--identity", "--seed", str(seed), "--out", str(out)])
        assert rc == 0 and time.perf_counter() - t0 < 5.0
        outs.append((out / "enhanced.ppm").read_bytes())
    assert outs[0] == outs[1]
    a = decode_image(outs[0])
    b = read_image(image_file)
    assert np.max(np.abs(a - b)) <= 1 / 255 + 1e-12
    report = json.loads((tmp_path / "o1" / "enhanced.json").read_text())
    assert report["max_abs_change_levels"] <= 1 and report["shape"] == [1, 3, 64, 80]
    depf = read_tensor((tmp_path / "o1" / "enhanced.depf").read_bytes())
    assert depf.dtype == np.float32 and depf.shape == (1, 3, 64, 80)


def test_enhance_random_is_deterministic(tmp_path, image_file):
    for name in ("a", "b"):
        assert main(["enhance", str(image_file), "--seed", "4", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a/enhanced.depf").read_bytes() == (tmp_path / "b/enhanced.depf").read_bytes()


def test_enhance_params_bundle_roundtrip(tmp_path, image_file):
    bundle = tmp_path / "bundle"
    assert main(["enhance", str(image_file), "--seed", "6", "--save-params", str(bundle),
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["enhance", str(image_file), "--seed", "7", "--params", str(bundle),
                 "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/enhanced.depf").read_bytes() == (tmp_path / "b/enhanced.depf").read_bytes()
    # structural mismatch is a configuration error
    assert main(["enhance", str(image_file), "--levels", "1", "--params", str(bundle),
                 "--out", str(tmp_path / "c")]) == 2


def test_enhance_bad_inputs(tmp_path, capsys):
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P6\n2 2\n255\n\0")
    assert main(["enhance", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["enhance", str(tmp_path / "missing.ppm"), "--out", str(tmp_path / "o")]) == 2
    grey = tmp_path / "g.pgm"
    grey.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
    assert main(["enhance", str(grey), "--out", str(tmp_path / "o")]) == 2


def test_config_file_error_exit_code(tmp_path, image_file):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"colour": "red"}')
    assert main(["enhance", str(image_file), "--config", str(cfg), "--out", str(tmp_path)]) == 2


# -- CLI: fuse -------------------------------------------------------------

def write_features(path, x):
    path.write_bytes(write_tensor(x))
    return str(path)


def test_fuse_identical_inputs(tmp_path):
    f = Prng(8).uniform((1, 4, 6, 5), -1, 1).astype(np.float32)
    a = write_features(tmp_path / "v.depf", f)
    b = write_features(tmp_path / "i.depf", f)
    assert main(["fuse", a, b, "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o/fused.json").read_text())
    assert report["perms_equal"] and report["variant"] == "d"
    fused_bytes = (tmp_path / "o/fused.depf").read_bytes()
    fused = read_tensor(fused_bytes)
    assert fused.shape == f.shape and write_tensor(fused) == fused_bytes


def test_fuse_variants_differ(tmp_path):
    p = Prng(9)
    a = write_features(tmp_path / "v.depf", p.uniform((1, 4, 5, 5), -1, 1))
    b = write_features(tmp_path / "i.depf", p.uniform((1, 4, 5, 5), -1, 1))
    for v in "bd":
        assert main(["fuse", a, b, "--variant", v, "--dtype", "f64",
                     "--out", str(tmp_path / v)]) == 0
    fb = read_tensor((tmp_path / "b/fused.depf").read_bytes())
    fd = read_tensor((tmp_path / "d/fused.depf").read_bytes())
    assert fb.dtype == np.float64 and not np.allclose(fb, fd)


def test_fuse_shape_mismatch_exit_code(tmp_path):
    a = write_features(tmp_path / "v.depf", np.zeros((1, 2, 3, 3)))
    b = write_features(tmp_path / "i.depf", np.zeros((1, 2, 3, 4)))
    assert main(["fuse", a, b, "--out", str(tmp_path)]) == 2


# -- CLI: verify and bench -------------------------------------------------

def test_verify_exit_codes(tmp_path, capsys):
    assert main(["verify", "tensor", "--out", str(tmp_path)]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["verify", "reconstruction", "--corrupt-haar", "--out", str(tmp_path)]) == 1
    assert "FAIL" in capsys.readouterr().out
    report = json.loads((tmp_path / "verify_reconstruction.json").read_text())
    assert report["corrupt_haar"] and not report["passed"]


def test_unknown_suite_is_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["verify", "nonsense"])
    assert err.value.code == 2


def test_bench_small(tmp_path):
    assert main(["bench", "--sizes", "64", "128", "--repeats", "1", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "bench.json").read_text())
    assert [r["n"] for r in report["rows"]] == [64, 128]
    assert main(["bench", "--sizes", "128", "64", "--out", str(tmp_path)]) == 2

"""Command-line entry point: ``priofuse {enhance,fuse,verify,bench}``.

Exit codes: 0 success (or all checks passed), 1 a check failed, 2 usage,
configuration or file-format error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dde, pgmf
from .bundle import load_bundle, read_manifest, save_bundle
from .config import ConfigError, RunConfig, load_config
from .imageio import quantize, read_image, write_image
from .tensor import FormatError, Prng, ShapeError, atomic_write, read_tensor, write_tensor
from .verify.suites import SUITE_NAMES, run_complexity_suite, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
# fields that fix the shape of a parameter tree
_STRUCTURAL = ("levels", "basis", "kernel_sizes", "state_dim", "discretization", "identity")


class UsageError(ValueError):
    pass


def write_json(path, obj) -> None:
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _common(p):
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--seed", type=int, metavar="U64")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--dtype", choices=("f32", "f64"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="priofuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="low-light enhancement of a P6 PPM image")
    p.add_argument("image")
    p.add_argument("--identity", action="store_true", default=None,
                   help="use identity parameters (output reproduces the input)")
    p.add_argument("--levels", type=int)
    p.add_argument("--basis")
    p.add_argument("--kernel-sizes", type=int, nargs="+", dest="kernel_sizes")
    p.add_argument("--params", metavar="DIR", help="load a parameter bundle")
    p.add_argument("--save-params", metavar="DIR", help="write the parameters used")
    _common(p)

    p = sub.add_parser("fuse", help="fuse RGB and IR feature tensors")
    p.add_argument("rgb")
    p.add_argument("ir")
    p.add_argument("--variant", choices=tuple("abcd"))
    p.add_argument("--dropout", type=float)
    p.add_argument("--params", metavar="DIR", help="load a parameter bundle")
    p.add_argument("--save-params", metavar="DIR", help="write the parameters used")
    _common(p)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", choices=SUITE_NAMES)
    p.add_argument("--corrupt-haar", action="store_true",
                   help="negative control: perturb one Haar tap")
    _common(p)

    p = sub.add_parser("bench", help="per-stage timings at doubling token counts")
    p.add_argument("--sizes", type=int, nargs="+", default=[2 ** 14, 2 ** 15, 2 ** 16])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--sort", choices=("radix", "comparison"), default="radix")
    _common(p)
    return parser


def _config(args, extra=()) -> RunConfig:
    overrides = {k: getattr(args, k) for k in ("seed", "out", "dtype") + tuple(extra)
                 if hasattr(args, k)}
    return load_config(args.config, overrides)


def _out_dir(cfg: RunConfig) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _check_bundle(directory, cfg: RunConfig, kind):
    stored = read_manifest(directory).get("config", {})
    if stored.get("kind") != kind:
        raise ConfigError(f"{directory} holds {stored.get('kind')!r} parameters, need {kind!r}")
    for key in _STRUCTURAL:
        if key in stored and stored[key] != getattr(cfg, key):
            raise ConfigError(f"bundle {key}={stored[key]!r} disagrees with config "
                              f"{key}={getattr(cfg, key)!r}")


def _bundle_config(cfg: RunConfig, kind, **extra):
    out = {k: getattr(cfg, k) for k in ("seed",) + _STRUCTURAL}
    out.update(kind=kind, **extra)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def dde_params_for(cfg: RunConfig, channels=3):
    if cfg.identity:
        return dde.identity_dde(channels, cfg.levels, tuple(cfg.kernel_sizes), cfg.basis,
                                cfg.state_dim)
    return dde.init_dde(Prng(cfg.seed), channels, cfg.levels, tuple(cfg.kernel_sizes),
                        cfg.basis, cfg.state_dim, cfg.discretization)


def cmd_enhance(args) -> int:
    cfg = _config(args, ("identity", "levels", "basis", "kernel_sizes"))
    img = read_image(args.image)
    if img.shape[1] != 3:
        raise FormatError("enhance expects an RGB (P6) image", 0)
    params = dde_params_for(cfg)
    if args.params:
        _check_bundle(args.params, cfg, "dde")
        load_bundle(args.params, params)
    if args.save_params:
        save_bundle(params, args.save_params, _bundle_config(cfg, "dde", channels=3))
    x = img.astype(cfg.numpy_dtype)
    y = np.clip(dde.dde_pipeline(x, params), 0.0, 1.0).astype(x.dtype)
    out = _out_dir(cfg)
    write_image(os.path.join(out, "enhanced.ppm"), y)
    atomic_write(os.path.join(out, "enhanced.depf"), write_tensor(y))
    diff = np.abs(quantize(y).astype(int) - quantize(img).astype(int))
    write_json(os.path.join(out, "enhanced.json"), {
        "config": cfg.to_dict(),
        "input": os.path.basename(args.image),
        "shape": list(y.shape),
        "max_abs_change_levels": int(diff.max()),
    })
    print(f"wrote {out}/enhanced.ppm and {out}/enhanced.depf")
    return EXIT_OK


def _stats(scores):
    return {"min": float(scores.min()), "max": float(scores.max()),
            "mean": float(scores.mean()), "std": float(scores.std())}


def cmd_fuse(args) -> int:
    cfg = _config(args, ("variant", "dropout"))
    with open(args.rgb, "rb") as fh:
        f_v = read_tensor(fh.read())
    with open(args.ir, "rb") as fh:
        f_i = read_tensor(fh.read())
    if f_v.shape != f_i.shape:
        raise ShapeError(f"RGB features {f_v.shape} and IR features {f_i.shape} differ in shape")
    channels = f_v.shape[1]
    params = pgmf.init_pgmf(Prng(cfg.seed), channels, cfg.state_dim,
                            discretization=cfg.discretization, dropout=cfg.dropout)
    if args.params:
        _check_bundle(args.params, cfg, "pgmf")
        load_bundle(args.params, params)
        params.dropout = cfg.dropout
    if args.save_params:
        save_bundle(params, args.save_params, _bundle_config(cfg, "pgmf", channels=channels))
    dt = cfg.numpy_dtype
    res = pgmf.pgmf_fuse(f_v.astype(dt), f_i.astype(dt), params, cfg.variant,
                         prng=Prng(cfg.seed).spawn(7))
    out = _out_dir(cfg)
    atomic_write(os.path.join(out, "fused.depf"), write_tensor(res.fused.astype(dt)))
    write_json(os.path.join(out, "fused.json"), {
        "config": cfg.to_dict(),
        "variant": cfg.variant,
        "shape": list(res.fused.shape),
        "perm_v": res.perm_v.tolist(),
        "perm_i": res.perm_i.tolist(),
        "perms_equal": bool(np.array_equal(res.perm_v, res.perm_i)),
        "scores_v": _stats(res.scores_v),
        "scores_i": _stats(res.scores_i),
        "timings": res.timings,
    })
    print(f"wrote {out}/fused.depf and {out}/fused.json")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args)
    report = run_suite(args.suite, cfg.seed, cfg.to_dict(), corrupt_haar=args.corrupt_haar)
    report["corrupt_haar"] = bool(args.corrupt_haar)
    out = _out_dir(cfg)
    path = os.path.join(out, f"verify_{args.suite}.json")
    write_json(path, report)
    for c in report["checks"]:
        mark = "PASS" if c["passed"] else "FAIL"
        print(f"{mark}  {c['suite']}/{c['name']}: observed {c['observed']} "
              f"(limit {c['relation']} {c['tolerance']})")
    print(f"{'all checks passed' if report['passed'] else 'checks FAILED'}; report at {path}")
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_bench(args) -> int:
    cfg = _config(args)
    if args.sizes != sorted(args.sizes) or len(set(args.sizes)) != len(args.sizes):
        raise UsageError("--sizes must be strictly increasing")
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    report = run_complexity_suite(args.sizes, args.repeats, cfg.seed, args.sort)
    report["config"] = cfg.to_dict()
    out = _out_dir(cfg)
    write_json(os.path.join(out, "bench.json"), report)
    for row in report["rows"]:
        print(f"N={row['n']:>8}  psn {row['psn']:.4f}s  sort {row['sort_serialize']:.4f}s  "
              f"ssm {row['ssm']:.4f}s")
    for stage, ratios in report["ratios"].items():
        print(f"{stage} doubling ratios: {', '.join(f'{r:.2f}' for r in ratios) or 'none'}")
    return EXIT_OK


COMMANDS = {"enhance": cmd_enhance, "fuse": cmd_fuse, "verify": cmd_verify, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (FormatError, ShapeError, ConfigError, UsageError, OSError) as exc:
        print(f"priofuse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

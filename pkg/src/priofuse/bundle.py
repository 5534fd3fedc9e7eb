"""Parameter bundles: a directory of tensor files plus ``manifest.json``.

A bundle stores every array leaf of a parameter tree (nested dataclasses
and lists) as its own tensor file, named by its dotted path.  Arrays of
rank below 4 are left-padded with unit axes on disk; the manifest records
the true shape.  Non-array leaves (flags, strings, floats) go into the
manifest.  Loading fills a template tree of the same structure, normally
rebuilt by the matching ``init_*`` call from the manifest's ``config``.
"""
from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .tensor import atomic_write, read_tensor, write_tensor


def iter_leaves(obj, prefix=""):
    """Yield ``(path, value)`` for every leaf of a parameter tree."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield from iter_leaves(getattr(obj, f.name), f"{prefix}{f.name}.")
    elif isinstance(obj, (list, tuple)) and obj and not isinstance(obj[0], (int, float)):
        for k, item in enumerate(obj):
            yield from iter_leaves(item, f"{prefix}{k}.")
    else:
        yield prefix[:-1], obj


def _set_path(obj, path, value):
    parts = path.split(".")
    for part in parts[:-1]:
        obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
    last = parts[-1]
    if last.isdigit():
        obj[int(last)] = value
    else:
        setattr(obj, last, value)


def save_bundle(params, directory, config: dict) -> None:
    os.makedirs(directory, exist_ok=True)
    arrays, scalars = {}, {}
    for path, value in iter_leaves(params):
        if isinstance(value, np.ndarray):
            fname = path + ".depf"
            arr = np.asarray(value, dtype=np.float64)
            padded = arr.reshape((1,) * (4 - arr.ndim) + arr.shape)
            atomic_write(os.path.join(directory, fname), write_tensor(padded))
            arrays[path] = {"file": fname, "shape": list(arr.shape)}
        else:
            scalars[path] = value.value if hasattr(value, "value") else value
    manifest = {"config": config, "arrays": arrays, "scalars": scalars}
    text = json.dumps(manifest, indent=2, sort_keys=True)
    atomic_write(os.path.join(directory, "manifest.json"), text.encode())


def read_manifest(directory) -> dict:
    with open(os.path.join(directory, "manifest.json")) as fh:
        return json.load(fh)


def load_bundle(directory, template):
    """Overwrite every array leaf of ``template`` with the stored values."""
    manifest = read_manifest(directory)
    known = {path for path, _ in iter_leaves(template)}
    for path, entry in manifest["arrays"].items():
        if path not in known:
            raise KeyError(f"bundle entry {path!r} has no slot in the parameter tree")
        with open(os.path.join(directory, entry["file"]), "rb") as fh:
            arr = read_tensor(fh.read())
        _set_path(template, path, arr.reshape(entry["shape"]))
    for path, value in manifest["scalars"].items():
        if path in known and isinstance(value, (bool, int, float)):
            _set_path(template, path, value)
    return template

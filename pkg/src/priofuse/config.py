"""Run configuration shared by every subcommand.

A config file is a JSON object whose keys are exactly the field names of
:class:`RunConfig`; command-line flags override file values.  Unknown
keys are rejected rather than ignored.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .dde import DEFAULT_KERNELS
from .pgmf import FusionVariant
from .ssm import DISCRETIZATIONS, ZOH
from .wavelet import BASES, DEFAULT_LEVELS

DTYPES = {"f32": "float32", "f64": "float64"}
U64_MAX = 2 ** 64 - 1


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    levels: int = DEFAULT_LEVELS
    basis: str = "haar"
    kernel_sizes: list = field(default_factory=lambda: list(DEFAULT_KERNELS))
    variant: str = "d"
    discretization: str = ZOH
    dropout: float = 0.0
    dtype: str = "f32"
    state_dim: int = 4
    identity: bool = False
    out: str = "out"

    def validate(self) -> "RunConfig":
        if (not isinstance(self.seed, int) or isinstance(self.seed, bool)
                or not 0 <= self.seed <= U64_MAX):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not isinstance(self.levels, int) or self.levels < 1:
            raise ConfigError(f"levels must be a positive integer, got {self.levels!r}")
        if self.basis not in BASES:
            raise ConfigError(f"basis must be one of {sorted(BASES)}, got {self.basis!r}")
        ks = list(self.kernel_sizes)
        if (not ks or any(not isinstance(k, int) or k < 1 or k % 2 == 0 for k in ks)
                or ks != sorted(set(ks))):
            raise ConfigError(f"kernel_sizes must be odd and strictly increasing, got {ks}")
        try:
            FusionVariant(self.variant)
        except ValueError:
            raise ConfigError(f"variant must be one of a, b, c, d, got {self.variant!r}") from None
        if self.discretization not in DISCRETIZATIONS:
            raise ConfigError(f"discretization must be one of {DISCRETIZATIONS}, "
                              f"got {self.discretization!r}")
        if not 0.0 <= float(self.dropout) < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout!r}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be f32 or f64, got {self.dtype!r}")
        if not isinstance(self.state_dim, int) or self.state_dim < 1:
            raise ConfigError(f"state_dim must be a positive integer, got {self.state_dim!r}")
        self.kernel_sizes = ks
        return self

    @property
    def numpy_dtype(self) -> str:
        return DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data).validate()


def load_config(path=None, overrides: dict = None) -> RunConfig:
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    data = dict(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return RunConfig.from_dict(data)

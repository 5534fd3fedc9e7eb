"""Detection-style losses: focal classification, smooth-L1 regression, and their mix."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    pass


@dataclass
class LossConfig:
    alpha_t: float = 1.0   # class weight
    gamma_t: float = 2.0   # focusing exponent
    alpha: float = 1.0     # weight of the classification term
    beta: float = 1.0      # weight of the regression term

    def __post_init__(self):
        if not self.alpha_t > 0:
            raise ValueError(f"class weight must be > 0, got {self.alpha_t}")
        if not self.gamma_t >= 0:
            raise ValueError(f"focusing exponent must be >= 0, got {self.gamma_t}")


def focal_loss(p, t, cfg: LossConfig = None):
    """``-alpha_t * (1 - p_t)**gamma_t * log(p_t)`` with ``p_t = p`` for t=1, else ``1 - p``.

    Works elementwise on arrays; returns a float for scalar inputs.
    """
    cfg = cfg or LossConfig()
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("probabilities must lie strictly inside (0, 1)")
    if np.any((t != 0) & (t != 1)):
        raise DomainError("class labels must be 0 or 1")
    p_t = np.where(t == 1, p, 1.0 - p)
    # p(1-t) + t(1-p) is exactly 1 - p_t
    modulator = (p * (1 - t) + t * (1.0 - p)) ** cfg.gamma_t
    out = -cfg.alpha_t * modulator * np.log(p_t)
    return float(out) if out.ndim == 0 else out


def smooth_l1(y_gt, y_pred):
    d = np.abs(np.asarray(y_gt, dtype=np.float64) - np.asarray(y_pred, dtype=np.float64))
    out = np.where(d < 1.0, 0.5 * d * d, d - 0.5)
    return float(out) if out.ndim == 0 else out


def total_loss(det, reg, cfg: LossConfig = None) -> float:
    cfg = cfg or LossConfig()
    return cfg.alpha * det + cfg.beta * reg

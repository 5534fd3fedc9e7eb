"""Gradient checks, losses and the verification suites."""
from .gradients import GradientReport, check_gradients, factor_two_check
from .losses import LossConfig, focal_loss, smooth_l1, total_loss
from .suites import run_complexity_suite, run_decay_suite, run_suite

__all__ = ["GradientReport", "LossConfig", "check_gradients", "factor_two_check", "focal_loss",
           "run_complexity_suite", "run_decay_suite", "run_suite", "smooth_l1", "total_loss"]

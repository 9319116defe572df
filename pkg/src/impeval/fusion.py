"""Laplace uncertainty per branch and confidence-weighted local/global fusion."""

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor

LOG_SIGMA_MIN = -6.0
LOG_SIGMA_MAX = 6.0
SQRT2 = math.sqrt(2.0)


@dataclass
class BranchOutput:
    heat: Tensor       # (..., R, R) in (0, 1)
    log_sigma: Tensor  # same shape, clamped to [-6, 6]

    def __post_init__(self):
        if self.heat.shape != self.log_sigma.shape:
            raise ShapeError(f"heat {self.heat.shape} and log_sigma {self.log_sigma.shape} differ")


@dataclass
class FusedHeatmap:
    heat: Tensor
    weight_local: Tensor


def _check(*ts):
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ShapeError(f"shape mismatch: {sorted(shapes)}")


def laplace_nll(heat, log_sigma, target):
    """mean((sqrt(2) / sigma) * |H - H_gt| + log sigma), sigma = exp(log_sigma)."""
    heat, log_sigma, target = ag._as_tensor(heat), ag._as_tensor(log_sigma), ag._as_tensor(target)
    _check(heat, log_sigma, target)
    resid = ag.abs(heat - target)
    inv_sigma = ag.exp(-log_sigma)
    return ag.mean(resid * inv_sigma * SQRT2 + log_sigma)


def optimal_sigma(resid):
    """Closed-form minimizer of the Laplace NLL in sigma for residual |r|."""
    return SQRT2 * np.abs(resid)


def confidence(log_sigma):
    """p = exp(-sigma) with sigma = exp(log_sigma). Accepts arrays or Tensors."""
    if isinstance(log_sigma, Tensor):
        return ag.exp(-ag.exp(log_sigma))
    return np.exp(-np.exp(np.asarray(log_sigma, dtype=np.float64)))


def fuse(local, global_, mode="uncertainty", weight_logit=None):
    """Per-pixel convex combination of the two branch heatmaps.

    mode: "uncertainty" (w_l = p_l / (p_l + p_g)), "fixed" (w_l = 0.5) or
    "learned-scalar" (w_l = sigmoid(weight_logit)).
    """
    _check(local.heat, global_.heat, local.log_sigma, global_.log_sigma)
    if mode == "uncertainty":
        p_l = confidence(local.log_sigma)
        p_g = confidence(global_.log_sigma)
        w = p_l / (p_l + p_g)
    elif mode == "fixed":
        w = Tensor(np.full(local.heat.shape, 0.5))
    elif mode == "learned-scalar":
        w = ag.sigmoid(weight_logit) * Tensor(np.ones(local.heat.shape))
    else:
        raise ValueError(f"unknown fusion mode {mode!r}")
    heat = w * local.heat + (1.0 - w) * global_.heat
    return FusedHeatmap(heat, w)

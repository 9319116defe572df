"""Training objective: quality-focal heatmap loss, per-branch Laplace NLL, score regression."""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ShapeError
from .fusion import laplace_nll
from .nn import ConfigError


@dataclass(frozen=True)
class LossWeights:
    focal: float = 1.0
    laplace: float = 1.0
    score: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        for key in ("focal", "laplace", "score", "gamma"):
            if getattr(self, key) < 0:
                raise ConfigError(f"loss weight {key} must be >= 0, got {getattr(self, key)}")


def focal_regression_loss(heat, target, gamma=2.0):
    """mean(|H_gt - H|^gamma * BCE(H, H_gt)) with continuous targets."""
    heat, target = ag._as_tensor(heat), ag._as_tensor(target)
    if heat.shape != target.shape:
        raise ShapeError(f"heatmap {heat.shape} and target {target.shape} differ")
    if np.any(heat.data <= 0.0) or np.any(heat.data >= 1.0):
        raise ValueError("focal loss needs predictions strictly inside (0, 1)")
    bce = -(target * ag.log(heat) + (1.0 - target) * ag.log(1.0 - heat))
    if gamma == 0:
        return ag.mean(bce)
    mod = ag.power(ag.abs(target - heat), gamma)
    return ag.mean(mod * bce)


def loss_terms(local, global_, target, s_pred, s_token, s_map, s_gt, weights=LossWeights()):
    """Return the weighted (focal, laplace, score) terms.

    ``local``/``global_`` are BranchOutputs or None for a disabled branch;
    ``s_pred``/``s_token``/``s_map`` are score tensors of shape (B,) or None.
    """
    branches = [b for b in (local, global_) if b is not None]
    if not branches:
        raise ConfigError("at least one heatmap branch is required")
    focal = lap = None
    for b in branches:
        f = focal_regression_loss(b.heat, target, weights.gamma)
        n = laplace_nll(b.heat, b.log_sigma, target)
        focal = f if focal is None else focal + f
        lap = n if lap is None else lap + n
    s_gt = ag._as_tensor(s_gt)
    score = None
    for s in (s_pred, s_token, s_map):
        if s is None:
            continue
        if s.shape != s_gt.shape:
            raise ShapeError(f"score {s.shape} and target {s_gt.shape} differ")
        diff = s - s_gt
        term = ag.mean(diff * diff)
        score = term if score is None else score + term
    if score is None:
        score = ag.Tensor(0.0)
    return focal * weights.focal, lap * weights.laplace, score * weights.score


def total_loss(local, global_, target, s_pred, s_token, s_map, s_gt, weights=LossWeights()):
    f, l, s = loss_terms(local, global_, target, s_pred, s_token, s_map, s_gt, weights)
    return f + l + s

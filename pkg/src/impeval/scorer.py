"""Plausibility scorer: token FFN path, heatmap conv path, learned calibration."""

import numpy as np

from . import autograd as ag
from .autograd import ShapeError
from .nn import Conv2d, Linear, MLP, Module, Parameter

CALIB_LOGIT_BOUND = 20.0


class Scorer(Module):
    def __init__(self, d, heat_resolution, rng, hidden=32, channels=(8, 16)):
        if heat_resolution % 4:
            raise ShapeError(f"heatmap resolution {heat_resolution} must be divisible by 4")
        self.token_ffn = MLP(d, hidden, 1, rng)
        self.conv1 = Conv2d(1, channels[0], rng)
        self.conv2 = Conv2d(channels[0], channels[1], rng)
        self.map_ffn = MLP(channels[1], hidden, 1, rng)
        self.calib_logit = Parameter(np.zeros(()))
        self.d = d
        self.resolution = heat_resolution

    def score_from_token(self, t_score):
        """(B, d) -> (B,) in (0, 1)."""
        if t_score.shape[-1] != self.d:
            raise ShapeError(f"score token width {t_score.shape[-1]} != {self.d}")
        out = self.token_ffn(t_score)
        return ag.sigmoid(out.reshape(out.shape[:-1]))

    def score_from_heatmap(self, heat):
        """(B, R, R) -> (B,) in (0, 1)."""
        r = self.resolution
        if heat.shape[-2:] != (r, r):
            raise ShapeError(f"heatmap {heat.shape[-2:]} does not match configured {(r, r)}")
        b = heat.shape[0]
        x = heat.reshape(b, r, r, 1)
        x = ag.gelu(self.conv1(x))
        x = ag.gelu(self.conv2(x))
        pooled = ag.mean(x.reshape(b, -1, x.shape[-1]), axis=1)
        out = self.map_ffn(pooled)
        return ag.sigmoid(out.reshape(b))

    def alpha(self):
        return ag.sigmoid(ag.clip(self.calib_logit, -CALIB_LOGIT_BOUND, CALIB_LOGIT_BOUND))

    def calibrate(self, s_token, s_map):
        """S = alpha * S_token + (1 - alpha) * S_map, alpha = sigmoid(w)."""
        a = self.alpha()
        return s_token * a + s_map * (1.0 - a)


def calibrate(s_token, s_map, logit):
    """Plain-float calibration with a fixed logit (clamped)."""
    logit = min(max(float(logit), -CALIB_LOGIT_BOUND), CALIB_LOGIT_BOUND)
    a = 0.5 * (1.0 + np.tanh(0.5 * logit))
    return a * s_token + (1.0 - a) * s_map

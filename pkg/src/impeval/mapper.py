"""Two-way cross-attention mapper: map tokens x image features -> heat tile."""

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .nn import ConfigError, LayerNorm, Linear, MLP, Module, MultiHeadAttention, Parameter
from .tiling import resize_matrix


@dataclass(frozen=True)
class MapperConfig:
    width: int = 64
    heads: int = 4
    stack_depth: int = 2
    tokens_per_tile: int = 1
    feature_grid: int = 8
    tile_resolution: int = 16
    mlp_ratio: int = 2
    residual: bool = True
    pos_embed: bool = True

    def __post_init__(self):
        if self.stack_depth < 1:
            raise ConfigError("stack_depth must be >= 1")
        if self.heads < 1 or self.width % self.heads:
            raise ConfigError(f"width {self.width} is not divisible by {self.heads} heads")
        if self.tile_resolution < self.feature_grid:
            raise ConfigError("tile_resolution must be >= feature_grid")


class TwoWayBlock(Module):
    """Token self-attention, token->image and image->token cross-attention.

    With ``residual`` each attention/MLP sub-layer output is added to its input.
    """

    def __init__(self, d, heads, mlp_hidden, rng, residual=True):
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.cross_t2i = MultiHeadAttention(d, heads, rng)
        self.norm_t = LayerNorm(d)
        self.mlp = MLP(d, mlp_hidden, d, rng)
        self.cross_i2t = MultiHeadAttention(d, heads, rng)
        self.norm_i = LayerNorm(d)
        self.residual = residual

    def __call__(self, tokens, image):
        if tokens.shape[-1] != image.shape[-1]:
            raise ShapeError(f"token width {tokens.shape[-1]} != image width {image.shape[-1]}")
        res = self.residual
        t = self.self_attn(tokens, tokens, tokens)
        if res:
            t = t + tokens
        c = self.cross_t2i(t, image, image)
        if res:
            c = c + t
        n = self.norm_t(c)
        t_out = self.mlp(n)
        if res:
            t_out = t_out + n
        ci = self.cross_i2t(image, t_out, t_out)
        if res:
            ci = ci + image
        return t_out, self.norm_i(ci)


class Mapper(Module):
    """Stacked two-way blocks followed by a 2-channel head (heat logit, log sigma)."""

    def __init__(self, cfg, rng, out_resolution=None):
        self.cfg = cfg
        d = cfg.width
        g = cfg.feature_grid
        self.out_resolution = out_resolution or cfg.tile_resolution
        if self.out_resolution < g:
            raise ConfigError("output resolution must be >= feature_grid")
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(g * g, d))) if cfg.pos_embed else None
        self.blocks = [TwoWayBlock(d, cfg.heads, cfg.mlp_ratio * d, rng, cfg.residual)
                       for _ in range(cfg.stack_depth)]
        self.head = Linear(d, 2, rng, scale=0.1)
        r = self.out_resolution
        self._up = Tensor(resize_matrix(g, r, "bilinear"))
        self._up_t = Tensor(np.ascontiguousarray(resize_matrix(g, r, "bilinear").T))

    def image_logits(self, tokens, feats, pos=None):
        """Run the blocks; return per-position (..., p, 2) head outputs."""
        g = self.cfg.feature_grid
        if feats.shape[-2] != g * g:
            raise ShapeError(f"expected {g * g} = {g}x{g} feature rows, got {feats.shape[-2]}")
        if tokens.shape[-2] != self.cfg.tokens_per_tile:
            raise ShapeError(f"expected {self.cfg.tokens_per_tile} map token(s), got {tokens.shape[-2]}")
        pos = self.pos if pos is None else pos
        image = feats + pos if pos is not None else feats
        t = tokens
        for blk in self.blocks:
            t, image = blk(t, image)
        return self.head(image)

    def __call__(self, tokens, feats, pos=None):
        """tokens (B, t, d), feats (B, g*g, d) -> (heat, log_sigma), each (B, r, r)."""
        g = self.cfg.feature_grid
        out = self.image_logits(tokens, feats, pos)
        lead = out.shape[:-2]
        maps = ag.transpose(out, tuple(range(len(lead))) + (len(lead) + 1, len(lead)))
        maps = maps.reshape(lead + (2, g, g))
        up = ag.matmul(ag.matmul(self._up, maps), self._up_t)
        logit = up[..., 0, :, :]
        log_sigma = ag.clip(up[..., 1, :, :], -6.0, 6.0)
        return ag.sigmoid(logit), log_sigma


def map_tokens_to_heatmap(tokens, feats, mapper):
    """Heat tile in (0, 1) for one set of map tokens and tile features."""
    heat, _ = mapper(tokens, feats)
    return heat


def feature_grid_side(p):
    g = int(math.isqrt(p))
    if g * g != p:
        raise ShapeError(f"{p} feature rows is not a perfect square")
    return g

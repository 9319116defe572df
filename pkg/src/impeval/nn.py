"""Parameters, a minimal module registry, and the layers the heads are built from."""

import functools
import math

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor


class ConfigError(ValueError):
    pass


class Parameter(Tensor):
    """A leaf tensor that always requires grad and carries a registry name."""

    __slots__ = ("name",)

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True)
        self.name = name


class Module:
    """Parameters and sub-modules are discovered from attributes in assignment
    order, which fixes the registry (and checkpoint) order."""

    def named_parameters(self, prefix=""):
        out = []
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                out.append((prefix + key, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(prefix + key + "."))
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    out.extend(v.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def assign_names(self):
        names = [n for n, _ in self.named_parameters()]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in model registry")
        for n, p in self.named_parameters():
            p.name = n
        return self


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, scale=1.0):
        bound = scale * math.sqrt(6.0 / (d_in + d_out))
        self.weight = Parameter(_uniform(rng, (d_in, d_out), bound))
        self.bias = Parameter(np.zeros(d_out)) if bias else None
        self.d_in = d_in
        self.d_out = d_out

    def __call__(self, x):
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"linear expects width {self.d_in}, got input {x.shape}")
        y = ag.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))

    def __call__(self, x):
        return ag.layer_norm(x, self.gain, self.bias)


class MLP(Module):
    def __init__(self, d_in, d_hidden, d_out, rng):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def __call__(self, x):
        return self.fc2(ag.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention over (..., tokens, width) inputs."""

    def __init__(self, d, heads, rng):
        if heads < 1 or d % heads:
            raise ConfigError(f"model width {d} is not divisible by {heads} heads")
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self.d = d
        self.heads = heads

    def _split(self, x):
        # (B, t, d) -> (B, h, t, dh)
        b, t, _ = x.shape
        return ag.transpose(x.reshape(b, t, self.heads, self.d // self.heads), (0, 2, 1, 3))

    def __call__(self, q, k, v):
        squeeze = q.ndim == 2
        if squeeze:
            q, k, v = q.reshape((1,) + q.shape), k.reshape((1,) + k.shape), v.reshape((1,) + v.shape)
        if k.shape[-2] != v.shape[-2]:
            raise ShapeError(f"keys {k.shape} and values {v.shape} differ in token count")
        b, tq, _ = q.shape
        if k.shape[-2] == 1:
            # softmax over a single key is exactly 1: output is o(v) for every query
            out = self.o(self.v(v))
            if tq != 1:
                out = ag.broadcast_to(out, (b, tq, self.d))
            return out.reshape(out.shape[1:]) if squeeze else out
        dh = self.d // self.heads
        qh = self._split(self.q(q))
        kh = self._split(self.k(k))
        vh = self._split(self.v(v))
        scores = ag.matmul(qh, ag.swap_last(kh)) * (1.0 / math.sqrt(dh))
        attn = ag.softmax(scores, axis=-1)
        ctx = ag.matmul(attn, vh)
        ctx = ag.transpose(ctx, (0, 2, 1, 3)).reshape(b, tq, self.d)
        out = self.o(ctx)
        return out.reshape(out.shape[1:]) if squeeze else out


@functools.lru_cache(maxsize=None)
def conv_index(h, w, c, k=3, stride=2, pad=1):
    """im2col gather table for channel-last (h, w, c) input flattened to h*w*c.
    Rows are output positions, columns (ky, kx, ch); -1 marks zero padding."""
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    oy, ox, ky, kx, ch = np.meshgrid(np.arange(ho), np.arange(wo), np.arange(k),
                                     np.arange(k), np.arange(c), indexing="ij")
    y = oy * stride - pad + ky
    x = ox * stride - pad + kx
    valid = (y >= 0) & (y < h) & (x >= 0) & (x < w)
    idx = np.where(valid, (y * w + x) * c + ch, -1).reshape(ho * wo, k * k * c)
    idx.setflags(write=False)
    return idx, ho, wo


class Conv2d(Module):
    """3x3 stride-2 convolution, padding 1, on channel-last (B, H, W, C) maps."""

    def __init__(self, c_in, c_out, rng, k=3, stride=2):
        self.lin = Linear(k * k * c_in, c_out, rng)
        self.c_in = c_in
        self.c_out = c_out
        self.k = k
        self.stride = stride

    def __call__(self, x):
        b, h, w, c = x.shape
        if c != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} channels, got {x.shape}")
        idx, ho, wo = conv_index(h, w, c, self.k, self.stride, self.k // 2)
        cols = ag.gather(x.reshape(b, h * w * c), idx)
        return self.lin(cols).reshape(b, ho, wo, self.c_out)

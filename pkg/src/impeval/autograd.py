"""Dense float64 tensors with a reverse-mode tape.

Every op records a node holding its parents and a backward closure. Calling
``backward()`` on a scalar visits reachable nodes in reverse creation order
(creation order is a topological order of the tape), so gradient reductions
happen in a fixed order and repeated runs are bit-identical.

Broadcasting is limited to leading-batch: in a binary op the smaller operand's
shape must be a suffix of the larger one's.
"""

import contextlib
import itertools

import numpy as np

from . import _accel


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_ids = itertools.count()
_grad_enabled = True
_CONSUMED = object()

# test hook: op name -> factor applied to that op's input gradients
_CORRUPT = {}


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "_op")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._id = next(_ids)
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.shape != ():
            raise TapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._backward is _CONSUMED:
            raise TapeError("this tape was already consumed by a previous backward")
        if not self.requires_grad:
            raise TapeError("loss does not depend on any tensor that requires grad")
        _run_backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _run_backward(root):
    seen = {root._id: root}
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node._parents:
            if p.requires_grad and p._id not in seen:
                if p._backward is _CONSUMED:
                    raise TapeError("graph reaches a node consumed by an earlier backward")
                seen[p._id] = p
                stack.append(p)
    grads = {root._id: np.ones((), dtype=np.float64)}
    for nid in sorted(seen, reverse=True):
        node = seen[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node._op == "leaf":
            g = np.array(g, dtype=np.float64)
            node.grad = g if node.grad is None else node.grad + g
            continue
        pgrads = node._backward(g)
        factor = _CORRUPT.get(node._op)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if factor is not None:
                pg = pg * factor
            prev = grads.get(p._id)
            grads[p._id] = pg if prev is None else prev + pg
        node._backward = _CONSUMED
        node._parents = ()


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced NaN or Inf")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._id = next(_ids)
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _check_suffix(sa, sb, op):
    if sa == sb:
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if long_[len(long_) - len(short):] != short:
        raise ShapeError(f"{op}: shapes {sa} and {sb} differ beyond leading batch axes")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead > 0 else g


# -- elementwise ----------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a.shape, b.shape, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a.shape, b.shape, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a.shape, b.shape, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb
    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a.shape, b.shape, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb
    return _make(out, (a, b), bw, "div")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def abs(a):  # noqa: A001 - mirrors numpy naming
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def power(a, p):
    """a ** p for a scalar exponent; for non-integer p the base must be >= 0."""
    p = float(p)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = a.data ** p

    def bw(g):
        if p == 0.0:
            return (np.zeros_like(a.data),)
        if p == 1.0:
            return (g,)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = p * a.data ** (p - 1.0)
        return (g * np.where(a.data == 0.0, 0.0 if p > 1.0 else d, d),)
    return _make(out, (a,), bw, "power")


def sigmoid(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)
    return _make(out, (a,), bw, "gelu")


def clip(a, lo, hi):
    out = np.clip(a.data, lo, hi)

    def bw(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)
    return _make(out, (a,), bw, "clip")


# -- reductions / shape ---------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)
    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))
    return _make(out, tuple(tensors), bw, "concat")


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))
    return _make(out, tuple(tensors), bw, "stack")


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(a, idx):
    out = a.data[idx]
    basic = _is_basic(idx)

    def bw(g):
        z = np.zeros(a.shape)
        if basic:
            z[idx] = g
        else:
            np.add.at(z, idx, g)
        return (z,)
    return _make(np.array(out, dtype=np.float64), (a,), bw, "getitem")


def gather(a, idx):
    """Gather along the flattened trailing axis: a (B, L), idx int array of any
    shape with -1 meaning zero fill. Returns (B,) + idx.shape."""
    if a.ndim != 2:
        raise ShapeError(f"gather expects a (batch, length) tensor, got {a.shape}")
    flat = idx.ravel()
    padded = np.concatenate([a.data, np.zeros((a.shape[0], 1))], axis=1)
    out = padded[:, flat].reshape((a.shape[0],) + idx.shape)
    length = a.shape[1]

    def bw(g):
        vals = np.ascontiguousarray(g.reshape(a.shape[0], -1))
        return (_accel.scatter_add(vals, flat, length),)
    return _make(out, (a,), bw, "gather")


def broadcast_to(a, shape):
    """Expand size-1 axes of ``a`` to ``shape`` (same rank)."""
    shape = tuple(shape)
    if len(shape) != a.ndim:
        raise ShapeError(f"broadcast_to keeps rank: {a.shape} -> {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)
    if any(a.shape[i] != 1 for i in axes):
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}")
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    return _make(out, (a,), lambda g: (g.sum(axis=axes, keepdims=True),), "broadcast_to")


def detach(a):
    return Tensor(a.data)


# -- linear algebra / nn primitives ---------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch extents differ: {a.shape} x {b.shape}")
    k = a.shape[-1]
    if b.ndim == 2 and a.ndim > 2:
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (b.shape[1],))
    else:
        out = a.data @ b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            else:
                ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb
    return _make(out, (a, b), bw, "matmul")


def softmax(a, axis=-1):
    if a.ndim == 0 or a.shape[axis] == 0:
        raise ShapeError(f"softmax over an empty axis (shape {a.shape})")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (a,), bw, "softmax")


LN_EPS = 1e-5


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Normalize over the last axis, then apply gain and bias."""
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError(f"layer_norm over a zero-length row (shape {x.shape})")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias {gain.shape}/{bias.shape} do not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gx = ggain = gbias = None
        if gain.requires_grad:
            ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            gbias = g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias
    return _make(out, (x, gain, bias), bw, "layer_norm")

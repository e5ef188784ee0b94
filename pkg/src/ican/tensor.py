"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation records its parents and a local gradient
rule on the output tensor. ``backward`` replays those records in reverse
topological order. Broadcasting is limited to Python scalars; anything
else must be reshaped explicitly.
"""

from contextlib import contextmanager

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class DegenerateBoxError(ValueError):
    pass


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, (int, float)) else mul(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, params=None):
        backward(self, params)


def tensor(data, requires_grad=False):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def _make(data, parents, rule, op):
    """Build an op output, recording it on the tape when any parent needs grad."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, rule, op)
    return Tensor(data, op=op)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# elementwise


def add(a, b):
    if isinstance(b, (int, float)):
        return _make(a.data + b, (a,), lambda g: (g,), "add_scalar")
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a, b):
    if isinstance(b, (int, float)):
        return _make(a.data * b, (a,), lambda g: (g * b,), "mul_scalar")
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def relu(x):
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def softmax(x):
    """Softmax over a 1-D tensor, shifted by its max for stability."""
    if x.data.ndim != 1:
        raise ShapeError(f"softmax expects a 1-D tensor, got {x.shape}")
    if x.size == 0:
        raise ShapeError("softmax of an empty tensor")
    e = np.exp(x.data - x.data.max())
    y = e / e.sum()
    return _make(y, (x,), lambda g: (y * (g - np.dot(g, y)),), "softmax")


# --------------------------------------------------------------------------
# shape ops and reductions


def reshape(x, shape):
    shape = tuple(shape)
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {shape}") from None
    return _make(data, (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of no tensors")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(data, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def tsum(x):
    shape = x.shape
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def mean(x):
    shape, n = x.shape, x.size
    return _make(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),), "mean")


# --------------------------------------------------------------------------
# linear algebra and convolution


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def linear(x, w, b=None):
    """Fully connected layer on a 1-D feature: ``x @ w + b`` as a 1-D result."""
    out = matmul(reshape(x, (1, x.size)), w)
    if b is not None:
        out = add(out, reshape(b, (1, b.size)) if b.data.ndim == 1 else b)
    return reshape(out, (w.shape[1],))


def conv2d(x, w, b=None, stride=1, pad=0):
    """2-D cross-correlation of a C x H x W input with F x C x k x k filters."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected C x H x W input and F x C x k x k weight, got {x.shape} and {w.shape}")
    c, h, wd = x.shape
    f, wc, k, k2 = w.shape
    if wc != c or k != k2:
        raise ShapeError(f"conv2d: weight {w.shape} does not fit input {x.shape}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be positive, got {stride}")
    if pad < 0:
        raise ValueError(f"conv2d: negative padding {pad}")
    hp, wp = h + 2 * pad, wd + 2 * pad
    if k > hp or k > wp:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {hp}x{wp}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x.data)
    cols = kernels.im2col(xp, k, stride, ho, wo)
    wm = w.data.reshape(f, c * k * k)
    out = wm @ cols
    parents = (x, w)
    if b is not None:
        if b.shape != (f,):
            raise ShapeError(f"conv2d: bias shape {b.shape} != ({f},)")
        out = out + b.data[:, None]
        parents = (x, w, b)

    def rule(g):
        g2 = g.reshape(f, ho * wo)
        gx = None
        if x.requires_grad:
            gxp = kernels.col2im(wm.T @ g2, c, hp, wp, k, stride, ho, wo)
            gx = gxp[:, pad : pad + h, pad : pad + wd] if pad else gxp
        gw = (g2 @ cols.T).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    return _make(out.reshape(f, ho, wo), parents, rule, "conv2d")


# --------------------------------------------------------------------------
# pooling


def _round_half_up(v):
    return int(np.floor(v + 0.5))


def roi_bins(box, shape, out, spatial_scale=1.0):
    """Integer bin edges for ROI max pooling.

    The box is projected onto the feature grid by rounding each coordinate,
    clipped to the map, and split into ``out`` bins per axis with
    floor/ceil edges so every bin holds at least one cell.
    """
    _, h, w = shape
    x1, y1, x2, y2 = (float(v) for v in box)
    c0 = min(max(_round_half_up(x1 * spatial_scale), 0), w)
    c1 = min(max(_round_half_up(x2 * spatial_scale), 0), w)
    r0 = min(max(_round_half_up(y1 * spatial_scale), 0), h)
    r1 = min(max(_round_half_up(y2 * spatial_scale), 0), h)
    if c1 <= c0 or r1 <= r0:
        raise DegenerateBoxError(f"box {tuple(box)} has zero area on the {h}x{w} feature grid (scale {spatial_scale})")

    def edges(start, length):
        idx = np.arange(out)
        lo = start + np.floor(idx * length / out).astype(np.int64)
        hi = start + np.ceil((idx + 1) * length / out).astype(np.int64)
        return np.stack([lo, np.maximum(hi, lo + 1)], axis=1)

    return edges(r0, r1 - r0), edges(c0, c1 - c0)


def roi_pool(fmap, box, out=7, spatial_scale=1.0):
    """Max-pool the projected box region of a C x H x W map into C x out x out."""
    if fmap.data.ndim != 3:
        raise ShapeError(f"roi_pool expects C x H x W, got {fmap.shape}")
    c, h, w = fmap.shape
    hbins, wbins = roi_bins(box, fmap.shape, out, spatial_scale)
    pooled, arg = kernels.roi_max_pool(np.ascontiguousarray(fmap.data), hbins, wbins)
    return _make(pooled, (fmap,), lambda g: (kernels.scatter_argmax(np.ascontiguousarray(g), arg, h, w),), "roi_pool")


def max_pool2d(x, size=2):
    c, h, w = x.shape
    if h < size or w < size:
        raise ShapeError(f"max_pool2d: window {size} larger than input {x.shape}")
    pooled, arg = kernels.max_pool(np.ascontiguousarray(x.data), size)
    return _make(pooled, (x,), lambda g: (kernels.scatter_argmax(np.ascontiguousarray(g), arg, h, w),), "max_pool2d")


def global_avg_pool(x):
    if x.data.ndim != 3 or x.shape[1] < 1 or x.shape[2] < 1:
        raise ShapeError(f"global_avg_pool expects C x H x W with H, W >= 1, got {x.shape}")
    c, h, w = x.shape
    n = h * w
    return _make(x.data.mean(axis=(1, 2)), (x,), lambda g: (np.broadcast_to(g[:, None, None] / n, (c, h, w)).copy(),), "gap")


# --------------------------------------------------------------------------
# losses


def bce_with_logits(logits, labels, mask=None):
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 labels.

    ``mask`` selects which entries take part in the mean; an all-false mask
    gives a zero loss.
    """
    z = logits.data
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != z.shape:
        raise ShapeError(f"bce: logits {z.shape} vs labels {y.shape}")
    m = np.ones_like(z) if mask is None else np.asarray(mask, dtype=np.float64)
    n = m.sum()
    if n == 0:
        return Tensor(np.array(0.0))
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    value = np.array((per * m).sum() / n)
    return _make(value, (logits,), lambda g: (float(g) * m * (_sigmoid(z) - y) / n,), "bce")


# --------------------------------------------------------------------------
# reverse pass


def topological_order(root):
    """The recorded tape reachable from ``root``, inputs before outputs."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, params=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf needing grad.

    Parameters in ``params`` that the loss does not reach get a zero gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)

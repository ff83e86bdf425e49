"""Minimal reverse-mode autodiff over numpy arrays.

A ``Tensor`` wraps an ndarray plus an optional gradient.  Every forward op
appends an implicit tape node (parent links + a backward closure); calling
``backward`` on a scalar root walks the tape in reverse topological order and
accumulates gradients additively across fan-out.

Training runs in float32; gradient verification runs the same graph in
float64 (dtype follows the inputs, so building the graph from float64
parameters is all it takes).
"""

import numpy as np

from .errors import NumericalError, ShapeError

_grad_enabled = True
_debug_checks = False
_node_counter = 0


class no_grad:
    """Context manager that suspends tape recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def set_debug_checks(on):
    """Toggle NaN/Inf checking after every forward op (slow; tests only)."""
    global _debug_checks
    _debug_checks = bool(on)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        global _node_counter
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        _node_counter += 1
        self.tape_id = _node_counter
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self)))

    def __rsub__(self, other):
        return add(_wrap(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return mul(_wrap(other, self), self)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is not a supported primitive")
        return mul(self, _wrap(1.0 / scalar, self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return tslice(self, idx)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def item(self):
        return float(self.data.reshape(()))


def _wrap(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data, parents, backward):
    """Create an op output; record a tape node only when grads can flow."""
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NumericalError("non-finite value produced by a forward op")
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` over axes that were broadcast so it matches ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise / structural ops ----------------------------------------

def add(a, b):
    data = a.data + b.data
    return _make(data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    data = a.data * b.data
    return _make(data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.data.shape),
                            _unbroadcast(g * a.data, b.data.shape)))


def tabs(a):
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a):
    data = np.maximum(a.data, 0)
    return _make(data, (a,), lambda g: (g * (a.data > 0),))


def _sigmoid_raw(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    y = _sigmoid_raw(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def sigmoid_array(x):
    """Stable sigmoid on a plain ndarray (no tape)."""
    return _sigmoid_raw(np.asarray(x, dtype=np.float64))


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), backward)


def layernorm(a, axis=-1, eps=1e-5):
    """Normalize to zero mean / unit variance along ``axis`` (no affine)."""
    mu = a.data.mean(axis=axis, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, (a,), backward)


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


def concat(tensors, axis=0):
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), backward)


def tslice(a, idx):
    """Basic indexing (ints/slices); gradient scatters back into place."""
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(data, (a,), backward)


def gather(a, indices):
    """Select rows along axis 0 with an integer array; backward scatter-adds."""
    idx = np.asarray(indices)
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(data, (a,), backward)


def reshape(a, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    data = a.data.reshape(shape)
    return _make(data, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes=None):
    data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return _make(data, (a,), lambda g: (np.transpose(g, inv),))


def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    data = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape) / n,)

    return _make(data, (a,), backward)


def bce_with_logits(pred, target):
    """Elementwise binary cross-entropy on logits, log-sum-exp stabilized."""
    z, t = pred.data, target.data
    data = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def backward(g):
        gz = _unbroadcast(g * (_sigmoid_raw(z) - t), z.shape)
        gt = _unbroadcast(g * (-z), t.shape)
        return (gz, gt)

    return _make(data, (pred, target), backward)


# -- convolutions ---------------------------------------------------------

def _im2col(x, kh, kw, stride, pad, ho, wo):
    n, c, _, _ = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
    )
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols, xshape, kh, kw, stride, pad, ho, wo):
    n, c, h, w = xshape
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    if pad:
        return xp[:, :, pad:-pad, pad:-pad]
    return xp


def conv2d(x, w, b, stride=1, pad=0):
    """NCHW convolution; weight (c_out, c_in, kh, kw), bias (c_out,)."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError("conv2d", x.data.shape, w.data.shape)
    n, _, h, wd = x.data.shape
    co, ci, kh, kw = w.data.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    cols = _im2col(x.data, kh, kw, stride, pad, ho, wo)
    wmat = w.data.reshape(co, -1)
    out = (wmat @ cols).reshape(n, co, ho, wo) + b.data.reshape(1, co, 1, 1)

    def backward(g):
        gmat = g.reshape(n, co, ho * wo)
        gb = g.sum(axis=(0, 2, 3))
        gw = np.tensordot(gmat, cols, axes=([0, 2], [0, 2])).reshape(w.data.shape)
        gcols = wmat.T @ gmat
        gx = _col2im(gcols, x.data.shape, kh, kw, stride, pad, ho, wo)
        return (gx, gw, gb)

    return _make(out, (x, w, b), backward)


def conv2d_transpose(x, w, b, stride=1, pad=0, out_pad=0):
    """NCHW transposed convolution; weight (c_in, c_out, kh, kw)."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError("conv2d_transpose", x.data.shape, w.data.shape)
    n, ci, h, wd = x.data.shape
    _, co, kh, kw = w.data.shape
    ho = (h - 1) * stride - 2 * pad + kh + out_pad
    wo = (wd - 1) * stride - 2 * pad + kw + out_pad
    wmat = w.data.reshape(ci, -1)  # (ci, co*kh*kw)
    cols = wmat.T @ x.data.reshape(n, ci, h * wd)
    out = _col2im_t(cols, co, kh, kw, stride, pad, h, wd, ho, wo)
    out = out + b.data.reshape(1, co, 1, 1)

    def backward(g):
        gb = g.sum(axis=(0, 2, 3))
        gcols = _im2col_t(g, kh, kw, stride, pad, h, wd, ho, wo)
        gw = np.tensordot(x.data.reshape(n, ci, h * wd), gcols, axes=([0, 2], [0, 2])).reshape(w.data.shape)
        gx = (wmat @ gcols).reshape(n, ci, h, wd)
        return (gx, gw, gb)

    return _make(out, (x, w, b), backward)


def _col2im_t(cols, co, kh, kw, stride, pad, hi, wi, ho, wo):
    """Scatter (n, co*kh*kw, hi*wi) columns into the (ho, wo) output plane."""
    n = cols.shape[0]
    cols = cols.reshape(n, co, kh, kw, hi, wi)
    op = np.zeros((n, co, ho + 2 * pad, wo + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            op[:, :, i:i + stride * hi:stride, j:j + stride * wi:stride] += cols[:, :, i, j]
    if pad:
        return op[:, :, pad:pad + ho, pad:pad + wo]
    return op[:, :, :ho, :wo]


def _im2col_t(g, kh, kw, stride, pad, hi, wi, ho, wo):
    """Gather columns of the output gradient at each input position."""
    n, co = g.shape[0], g.shape[1]
    gp = np.pad(g, ((0, 0), (0, 0), (pad, pad + kh), (pad, pad + kw)))
    s = gp.strides
    cols = np.lib.stride_tricks.as_strided(
        gp,
        shape=(n, co, kh, kw, hi, wi),
        strides=(s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
    )
    return cols.reshape(n, co * kh * kw, hi * wi)


# -- backward pass --------------------------------------------------------

def backward(root):
    """Reverse-topological gradient accumulation from a scalar root."""
    if root.data.size != 1:
        raise ShapeError("backward root must be scalar", root.data.shape)
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if node.tape_id in visited:
            continue
        visited.add(node.tape_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.tape_id not in visited:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g

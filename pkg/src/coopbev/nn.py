"""Layer building blocks on top of the autograd engine.

Parameters live in a single ordered name->Tensor registry so the whole model
(perception stack + every policy head) serializes into one checkpoint.
Weights draw from U(-sqrt(1/fan_in), +sqrt(1/fan_in)) keyed by parameter
name, which makes initialization independent of construction order.
"""

import numpy as np

from . import autograd as ag
from .rng import stream


class Params:
    """Ordered name -> Tensor registry with keyed initialization."""

    def __init__(self, seed, dtype=np.float32):
        self.seed = seed
        self.dtype = dtype
        self.tensors = {}

    def add(self, name, data):
        if name in self.tensors:
            raise ValueError(f"duplicate parameter {name}")
        t = ag.Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True)
        self.tensors[name] = t
        return t

    def uniform(self, name, shape, fan_in):
        bound = (1.0 / fan_in) ** 0.5
        data = stream(self.seed, "init", name).uniform(-bound, bound, size=shape)
        return self.add(name, data)

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def zero_grads(self):
        for t in self.tensors.values():
            t.grad = None

    def count(self, prefix=""):
        return sum(t.data.size for n, t in self.tensors.items() if n.startswith(prefix))

    def state_arrays(self):
        return {n: t.data for n, t in self.tensors.items()}

    def load_arrays(self, arrays, prefix=""):
        """Copy matching arrays in; missing or misshapen names raise KeyError."""
        for name, t in self.tensors.items():
            if not name.startswith(prefix):
                continue
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            src = arrays[name]
            if tuple(src.shape) != tuple(t.data.shape):
                raise KeyError(f"parameter {name}: checkpoint shape {src.shape} != model {t.data.shape}")
            t.data = src.astype(self.dtype)


class Linear:
    def __init__(self, params, name, n_in, n_out):
        self.w = params.uniform(f"{name}.w", (n_in, n_out), n_in)
        self.b = params.zeros(f"{name}.b", (n_out,))

    def __call__(self, x):
        return ag.matmul(x, self.w) + self.b


class Conv2d:
    def __init__(self, params, name, c_in, c_out, k=3, stride=1, pad=1):
        self.stride, self.pad = stride, pad
        self.w = params.uniform(f"{name}.w", (c_out, c_in, k, k), c_in * k * k)
        self.b = params.zeros(f"{name}.b", (c_out,))

    def __call__(self, x):
        return ag.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class ConvTranspose2d:
    def __init__(self, params, name, c_in, c_out, k=3, stride=2, pad=1, out_pad=1):
        self.stride, self.pad, self.out_pad = stride, pad, out_pad
        self.w = params.uniform(f"{name}.w", (c_in, c_out, k, k), c_in * k * k)
        self.b = params.zeros(f"{name}.b", (c_out,))

    def __call__(self, x):
        return ag.conv2d_transpose(x, self.w, self.b, stride=self.stride,
                                   pad=self.pad, out_pad=self.out_pad)


class LayerNorm:
    def __init__(self, params, name, dim, eps=1e-5):
        self.eps = eps
        self.gamma = params.ones(f"{name}.g", (dim,))
        self.beta = params.zeros(f"{name}.b", (dim,))

    def __call__(self, x):
        return ag.layernorm(x, axis=-1, eps=self.eps) * self.gamma + self.beta


class TransformerLayer:
    """Pre-norm encoder layer: x + MHSA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, params, name, d, n_heads, d_ffn):
        if d % n_heads:
            raise ValueError("model dim must divide across heads")
        self.d, self.h, self.dh = d, n_heads, d // n_heads
        self.ln1 = LayerNorm(params, f"{name}.ln1", d)
        self.wq = Linear(params, f"{name}.wq", d, d)
        self.wk = Linear(params, f"{name}.wk", d, d)
        self.wv = Linear(params, f"{name}.wv", d, d)
        self.wo = Linear(params, f"{name}.wo", d, d)
        self.ln2 = LayerNorm(params, f"{name}.ln2", d)
        self.ffn1 = Linear(params, f"{name}.ffn1", d, d_ffn)
        self.ffn2 = Linear(params, f"{name}.ffn2", d_ffn, d)

    def _heads(self, x, n, t):
        return ag.transpose(ag.reshape(x, (n, t, self.h, self.dh)), (0, 2, 1, 3))

    def __call__(self, x):
        n, t, _ = x.shape
        h = self.ln1(x)
        q = self._heads(self.wq(h), n, t)
        k = self._heads(self.wk(h), n, t)
        v = self._heads(self.wv(h), n, t)
        att = ag.softmax(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))) * (1.0 / self.dh ** 0.5), axis=-1)
        ctx = ag.reshape(ag.transpose(ag.matmul(att, v), (0, 2, 1, 3)), (n, t, self.d))
        x = x + self.wo(ctx)
        h2 = self.ln2(x)
        return x + self.ffn2(ag.relu(self.ffn1(h2)))


class Mlp:
    """Linear stack with ReLU between layers, linear output."""

    def __init__(self, params, name, dims):
        self.layers = [Linear(params, f"{name}.l{i + 1}", dims[i], dims[i + 1])
                       for i in range(len(dims) - 1)]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ag.relu(x)
        return x

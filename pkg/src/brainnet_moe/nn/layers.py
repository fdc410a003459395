"""Parameter containers and the layers the model is built from."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, linear, matmul


class Module:
    """Registers parameter tensors and sub-modules under dotted names.

    Attribute assignment decides the naming: a ``Tensor`` with
    ``requires_grad`` becomes a parameter, a ``Module`` becomes a child and
    contributes ``<attr>.<child names>``.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    """Children named ``0``, ``1``, ... in insertion order."""

    def __init__(self, modules=()):
        super().__init__()
        self._items: list = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class DenseLayer(Module):
    """Affine map ``y = x Wᵀ + b`` with Glorot-uniform weights and zero bias."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor(glorot(rng, out_dim, in_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def forward(self, x) -> Tensor:
        return dense_forward(self, x)


def dense_forward(layer: DenseLayer, x) -> Tensor:
    shape = x.shape
    if shape[-1] != layer.in_dim:
        raise ShapeError(f"dense layer expects input width {layer.in_dim}, got {shape[-1]}")
    return linear(x, layer.weight, layer.bias)


def gelu(x: Tensor) -> Tensor:
    return x.gelu()


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return x.softmax(axis)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.scale = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / (var + self.eps).sqrt() * self.scale + self.shift


def attention(q: Tensor, k: Tensor, v: Tensor, dim: int) -> Tensor:
    """Scaled dot-product attention ``softmax(q kᵀ / sqrt(dim)) v``.

    Operands are ``[..., S, dim]``; leading axes are treated as batch axes.
    """
    if q.shape[-1] != dim or k.shape[-1] != dim:
        raise ShapeError(f"query/key width must be {dim}, got {q.shape} and {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key and value lengths differ: {k.shape} vs {v.shape}")
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dim))
    return matmul(scores.softmax(-1), v)


class TransformerLayer(Module):
    """Pre-norm encoder block: ``x + attn(LN(x))`` then ``h + ff(LN(h))``."""

    def __init__(self, model_dim: int, rng: np.random.Generator, n_heads: int = 1):
        super().__init__()
        if model_dim % n_heads:
            raise ShapeError(f"model_dim {model_dim} is not divisible by {n_heads} heads")
        self.model_dim = model_dim
        self.n_heads = n_heads
        self.query = DenseLayer(model_dim, model_dim, rng)
        self.key = DenseLayer(model_dim, model_dim, rng)
        self.value = DenseLayer(model_dim, model_dim, rng)
        self.output = DenseLayer(model_dim, model_dim, rng)
        self.ff = ModuleList([DenseLayer(model_dim, 4 * model_dim, rng),
                              DenseLayer(4 * model_dim, model_dim, rng)])
        self.norm1 = LayerNorm(model_dim)
        self.norm2 = LayerNorm(model_dim)

    def _split(self, t: Tensor) -> Tensor:
        *lead, s, d = t.shape
        h = self.n_heads
        return t.reshape(tuple(lead) + (s, h, d // h)).swapaxes(-2, -3)

    def _merge(self, t: Tensor) -> Tensor:
        t = t.swapaxes(-2, -3)
        *lead, s, h, dh = t.shape
        return t.reshape(tuple(lead) + (s, h * dh))

    def self_attention(self, x: Tensor) -> Tensor:
        q, k, v = self.query(x), self.key(x), self.value(x)
        if self.n_heads == 1:
            ctx = attention(q, k, v, self.model_dim)
        else:
            dh = self.model_dim // self.n_heads
            ctx = self._merge(attention(self._split(q), self._split(k), self._split(v), dh))
        return self.output(ctx)

    def forward(self, x: Tensor) -> Tensor:
        h = x + self.self_attention(self.norm1(x))
        return h + self.ff[1](self.ff[0](self.norm2(h)).gelu())

"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every operation on a :class:`Tensor` that has a differentiable ancestor records
its parents and a backward closure. Calling :meth:`Tensor.backward` on a scalar
walks that graph in reverse topological order and accumulates ``.grad`` on every
tensor that requires it. The graph *is* the tape: it is built per forward pass
and dropped with the output, so two passes never share state.
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import NumericalError, ShapeError

_state = threading.local()

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording for the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite value produced by {what}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple, backward: Callable, what: str) -> "Tensor":
    _check_finite(data, what)
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track, _copy=False)
    if track:
        out._parents = parents
        out._backward = backward
        out._op = what
    return out


class Tensor:
    """A float64 array with an optional gradient and a link into the graph."""

    __array_priority__ = 1000
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, _copy: bool = True):
        arr = np.array(data, dtype=np.float64) if _copy else np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op})"

    def __len__(self) -> int:
        return len(self.data)

    # -- backward engine ------------------------------------------------
    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
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

        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                _check_finite(pg, f"backward of {node._op}")
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return _result(self.data + other.data, (self, other),
                       lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return _result(self.data - other.data, (self, other),
                       lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)), "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return _result(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data

        def back(g):
            return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

        return _result(x * y, (self, other), back, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data

        def back(g):
            return _unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)

        return _result(x / y, (self, other), back, "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        x = self.data
        out = x ** exponent
        return _result(out, (self,), lambda g: (g * exponent * x ** (exponent - 1),), "pow")

    def __matmul__(self, other):
        return matmul(self, other)

    # -- elementwise ----------------------------------------------------
    def exp(self):
        out = np.exp(self.data)
        return _result(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        x = self.data
        if (x <= 0).any():
            raise NumericalError("log of a non-positive value")
        return _result(np.log(x), (self,), lambda g: (g / x,), "log")

    def sqrt(self):
        out = np.sqrt(self.data)
        # subgradient 0 at the kink so exactly-uniform gates stay finite
        safe = np.where(out > 0, out, 1.0)

        def back(g):
            return (np.where(out > 0, g * 0.5 / safe, 0.0),)

        return _result(out, (self,), back, "sqrt")

    def abs(self):
        x = self.data
        return _result(np.abs(x), (self,), lambda g: (g * np.sign(x),), "abs")

    def tanh(self):
        out = np.tanh(self.data)
        return _result(out, (self,), lambda g: (g * (1.0 - out * out),), "tanh")

    def sigmoid(self):
        out = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return _result(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def softplus(self):
        x = self.data
        out = np.logaddexp(0.0, x)
        return _result(out, (self,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * x)),), "softplus")

    def gelu(self):
        x = self.data
        inner = _GELU_C * (x + _GELU_K * x ** 3)
        t = np.tanh(inner)
        out = 0.5 * x * (1.0 + t)

        def back(g):
            dinner = _GELU_C * (1.0 + 3.0 * _GELU_K * x * x)
            return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

        return _result(out, (self,), back, "gelu")

    def clamp_min(self, floor: float):
        x = self.data
        mask = x > floor
        return _result(np.where(mask, x, floor), (self,), lambda g: (g * mask,), "clamp_min")

    def xlogx(self):
        """Elementwise ``x * ln(x)`` with the convention ``0 * ln 0 = 0``."""
        x = self.data
        if (x < 0).any():
            raise NumericalError("xlogx of a negative value")
        pos = x > 0
        safe = np.where(pos, x, 1.0)
        out = np.where(pos, x * np.log(safe), 0.0)
        return _result(out, (self,), lambda g: (np.where(pos, g * (np.log(safe) + 1.0), 0.0),), "xlogx")

    # -- reductions -----------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _result(out, (self,), back, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def cumsum(self, axis: int = -1):
        def back(g):
            return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

        return _result(np.cumsum(self.data, axis=axis), (self,), back, "cumsum")

    def max(self, axis=None, keepdims: bool = False):
        """Maximum along ``axis``; ties share the gradient equally."""
        x = self.data
        out = x.max(axis=axis, keepdims=True)
        mask = (x == out).astype(np.float64)
        mask /= mask.sum(axis=axis, keepdims=True)
        res = out if keepdims else np.squeeze(out, axis=axis) if axis is not None else out.reshape(())

        def back(g):
            if not keepdims:
                g = np.expand_dims(g, axis) if axis is not None else np.reshape(g, (1,) * x.ndim)
            return (g * mask,)

        return _result(res, (self,), back, "max")

    # -- shape ----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return _result(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),), "reshape")

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        return _result(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    @property
    def T(self):
        return self.transpose()

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def unsqueeze(self, axis: int):
        shape = list(self.shape)
        if axis < 0:
            axis += self.ndim + 1
        shape.insert(axis, 1)
        return self.reshape(tuple(shape))

    def __getitem__(self, idx):
        shape = self.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return _result(np.array(self.data[idx]), (self,), back, "getitem")

    # -- normalizations -------------------------------------------------
    def softmax(self, axis: int = -1):
        x = self.data
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        out = e / e.sum(axis=axis, keepdims=True)

        def back(g):
            return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

        return _result(out, (self,), back, "softmax")

    def log_softmax(self, axis: int = -1):
        x = self.data
        shifted = x - x.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = shifted - lse
        soft = np.exp(out)

        def back(g):
            return (g - soft * g.sum(axis=axis, keepdims=True),)

        return _result(out, (self,), back, "log_softmax")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    x, y = a.data, b.data

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape)
        gb = _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape)
        return ga, gb

    return _result(x @ y, (a, b), back, "matmul")


def linear(x, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x`` (any leading shape)."""
    x = as_tensor(x)
    out_f, in_f = weight.shape
    if x.shape[-1] != in_f:
        raise ShapeError(f"linear expects last dim {in_f}, got shape {x.shape}")
    xd, w = x.data, weight.data
    lead = xd.shape[:-1]
    flat = xd.reshape(-1, in_f)
    out = flat @ w.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.reshape(-1, out_f)
        gx = (g2 @ w).reshape(xd.shape)
        gw = g2.T @ flat
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _result(out.reshape(lead + (out_f,)), parents, back, "linear")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _result(out, tuple(tensors), back, "stack")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(out, tuple(tensors), back, "concat")


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None

"""Tape-based reverse-mode autodiff over numpy arrays.

Each op returns a new :class:`Tensor` holding a closure that pushes the
output gradient back to its parents. Nodes whose parents do not require a
gradient record nothing, so evaluation with constant parameters runs without
a tape.
"""

from __future__ import annotations

import math

import numpy as np

_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out the axes numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _make(self, data, parents, backward) -> Tensor:
        live = tuple(p for p in parents if p.requires_grad)
        if not live:
            return Tensor(data)
        return Tensor(data, True, parents, backward)

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape).astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # -- elementwise ---------------------------------------------------------

    def __add__(self, other) -> Tensor:
        other = _lift(other, self.dtype)
        out_data = self.data + other.data

        def backward(g):
            self._accum(g)
            other._accum(g)

        return self._make(out_data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        other = _lift(other, self.dtype)

        def backward(g):
            self._accum(g)
            other._accum(-g)

        return self._make(self.data - other.data, (self, other), backward)

    def __rsub__(self, other) -> Tensor:
        return _lift(other, self.dtype) - self

    def __neg__(self) -> Tensor:
        return self * -1.0

    def __mul__(self, other) -> Tensor:
        other = _lift(other, self.dtype)

        def backward(g):
            self._accum(g * other.data)
            other._accum(g * self.data)

        return self._make(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        other = _lift(other, self.dtype)

        def backward(g):
            self._accum(g / other.data)
            other._accum(-g * self.data / (other.data * other.data))

        return self._make(self.data / other.data, (self, other), backward)

    def __pow__(self, p: float) -> Tensor:
        def backward(g):
            self._accum(g * p * self.data ** (p - 1))

        return self._make(self.data**p, (self,), backward)

    def exp(self) -> Tensor:
        out = np.exp(self.data)

        def backward(g):
            self._accum(g * out)

        return self._make(out, (self,), backward)

    def log(self) -> Tensor:
        def backward(g):
            self._accum(g / self.data)

        return self._make(np.log(self.data), (self,), backward)

    def sqrt(self) -> Tensor:
        out = np.sqrt(self.data)

        def backward(g):
            self._accum(g * 0.5 / out)

        return self._make(out, (self,), backward)

    def gelu(self) -> Tensor:
        """GELU, tanh approximation."""
        x = self.data
        inner = _GELU_C * (x + 0.044715 * x**3)
        t = np.tanh(inner)
        out = 0.5 * x * (1.0 + t)

        def backward(g):
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
            self._accum(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner))

        return self._make(out.astype(x.dtype, copy=False), (self,), backward)

    # -- reductions and shape ------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        out = self.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(self.dtype)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape))

        return self._make(out, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max_const(self, axis: int) -> np.ndarray:
        """Row max as a plain array (used as a constant shift, no gradient)."""
        return self.data.max(axis=axis, keepdims=True)

    def reshape(self, *shape) -> Tensor:
        old = self.data.shape

        def backward(g):
            self._accum(g.reshape(old))

        return self._make(self.data.reshape(*shape), (self,), backward)

    def transpose(self, *axes) -> Tensor:
        axes = axes or tuple(reversed(range(self.data.ndim)))
        inverse = tuple(np.argsort(axes))

        def backward(g):
            self._accum(g.transpose(inverse))

        return self._make(self.data.transpose(axes), (self,), backward)

    def swap_last(self) -> Tensor:
        axes = list(range(self.data.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(*axes)

    def __matmul__(self, other) -> Tensor:
        other = _lift(other, self.dtype)
        out = _matmul(self.data, other.data)

        def backward(g):
            if self.requires_grad:
                self._accum(_matmul(g, np.swapaxes(other.data, -1, -2)))
            if other.requires_grad:
                other._accum(_matmul(np.swapaxes(self.data, -1, -2), g))

        return self._make(out, (self, other), backward)

    # -- driver --------------------------------------------------------------

    def backward(self) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # accumulate in float64, store in the operand precision
    out_dtype = np.result_type(a.dtype, b.dtype)
    return np.matmul(a.astype(np.float64, copy=False), b.astype(np.float64, copy=False)).astype(
        out_dtype, copy=False
    )


# -- composite functions -------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gain + bias


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` laid out (out_features, in_features)."""
    out = x @ weight.swap_last()
    if bias is not None:
        out = out + bias
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - x.max_const(axis)
    return shifted - shifted.exp().sum(axis=axis, keepdims=True).log()


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    e = (x - x.max_const(axis)).exp()
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels``."""
    logp = log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -(logp * onehot).sum() * (1.0 / len(labels))

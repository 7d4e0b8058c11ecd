"""
Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Only the operations needed by the GATv2 model, the recurrent nianzhi detector
and their losses are provided. Each op records its parents and a closure that
accumulates gradients into them; :meth:`Tensor.backward` runs the closures in
reverse topological order.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch, NonFiniteGradient


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g):
        if not self.requires_grad:
            return
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self, grad=None):
        order, seen = [], set()

        def visit(t):
            stack = [(t, False)]
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

        visit(self)
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            if node.grad is not None and not np.all(np.isfinite(node.grad)):
                raise NonFiniteGradient(f"non-finite gradient in {node.name or 'intermediate tensor'}")

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, parents=(self, other))
        out._backward = lambda g: (self._accum(g), other._accum(g))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))
        out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, parents=(self, other))
        out._backward = lambda g: (self._accum(g * other.data), other._accum(g * self.data))
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data / other.data, parents=(self, other))
        out._backward = lambda g: (self._accum(g / other.data),
                                   other._accum(-g * self.data / other.data ** 2))
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.shape[-1] != other.data.shape[0]:
            raise DimensionMismatch(f"matmul {self.shape} @ {other.shape}")
        out = Tensor(self.data @ other.data, parents=(self, other))
        out._backward = lambda g: (self._accum(g @ other.data.T), other._accum(self.data.T @ g))
        return out

    @property
    def T(self):
        out = Tensor(self.data.T, parents=(self,))
        out._backward = lambda g: self._accum(g.T)
        return out

    # -- reductions --------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape))

        out._backward = back
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis, keepdims) * (1.0 / count)

    # -- elementwise -------------------------------------------------------
    def _unary(self, value, deriv):
        out = Tensor(value, parents=(self,))
        out._backward = lambda g: self._accum(g * deriv())
        return out

    def exp(self):
        v = np.exp(self.data)
        return self._unary(v, lambda: v)

    def log(self):
        return self._unary(np.log(self.data), lambda: 1.0 / self.data)

    def sqrt(self):
        v = np.sqrt(self.data)
        return self._unary(v, lambda: 0.5 / v)

    def abs(self):
        # subgradient of |x| at 0 is taken as 0
        return self._unary(np.abs(self.data), lambda: np.sign(self.data))

    def tanh(self):
        v = np.tanh(self.data)
        return self._unary(v, lambda: 1.0 - v * v)

    def sigmoid(self):
        v = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return self._unary(v, lambda: v * (1.0 - v))

    def leaky_relu(self, slope: float = 0.2):
        pos = self.data > 0
        return self._unary(np.where(pos, self.data, slope * self.data), lambda: np.where(pos, 1.0, slope))

    def elu(self, alpha: float = 1.0):
        pos = self.data > 0
        neg = alpha * np.expm1(np.minimum(self.data, 0.0))
        return self._unary(np.where(pos, self.data, neg), lambda: np.where(pos, 1.0, neg + alpha))

    def relu(self):
        pos = self.data > 0
        return self._unary(np.where(pos, self.data, 0.0), lambda: pos.astype(np.float64))

    def square(self):
        return self._unary(self.data ** 2, lambda: 2.0 * self.data)

    # -- structural --------------------------------------------------------
    def rows(self, index):
        """Gather rows ``self[index]`` (indices may repeat)."""
        index = np.asarray(index, dtype=np.int64)
        out = Tensor(self.data[index], parents=(self,))

        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, index, g)
            self._accum(full)

        out._backward = back
        return out

    def cols(self, start: int, stop: int):
        out = Tensor(self.data[:, start:stop], parents=(self,))

        def back(g):
            full = np.zeros_like(self.data)
            full[:, start:stop] = g
            self._accum(full)

        out._backward = back
        return out

    def scatter_rows(self, index, size: int):
        """Sum rows into ``size`` buckets: ``out[index[k]] += self[k]``."""
        index = np.asarray(index, dtype=np.int64)
        data = np.zeros((size,) + self.data.shape[1:])
        np.add.at(data, index, self.data)
        out = Tensor(data, parents=(self,))
        out._backward = lambda g: self._accum(g[index])
        return out

    def log_softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        value = shifted - lse
        soft = np.exp(value)
        out = Tensor(value, parents=(self,))
        out._backward = lambda g: self._accum(g - soft * g.sum(axis=axis, keepdims=True))
        return out

    def softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        value = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(value, parents=(self,))
        out._backward = lambda g: self._accum(value * (g - (g * value).sum(axis=axis, keepdims=True)))
        return out

    def row_norm(self):
        """Euclidean norm of each row, shape (n, 1); gradient 0 at a zero row."""
        norm = np.sqrt((self.data ** 2).sum(axis=1, keepdims=True))
        out = Tensor(norm, parents=(self,))

        def back(g):
            safe = np.where(norm > 0, norm, 1.0)
            self._accum(np.where(norm > 0, g * self.data / safe, 0.0))

        out._backward = back
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))

    def back(g):
        parts = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        for t, part in zip(tensors, parts):
            t._accum(part)

    out._backward = back
    return out


def segment_softmax(scores: Tensor, segment, size: int) -> Tensor:
    """Softmax of ``scores`` (m, 1) within groups given by ``segment`` (m,)."""
    segment = np.asarray(segment, dtype=np.int64)
    peak = np.full(size, -np.inf)
    np.maximum.at(peak, segment, scores.data[:, 0])
    shifted = scores - Tensor(peak[segment][:, None])
    e = shifted.exp()
    total = e.scatter_rows(segment, size)
    return e / total.rows(segment)


def parameter(array, name: str = "") -> Tensor:
    return Tensor(np.array(array, dtype=np.float64), requires_grad=True, name=name)

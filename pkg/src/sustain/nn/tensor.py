"""Reverse-mode differentiable arrays on top of numpy.

Each operation records its parents and a closure that pushes the output
gradient back to them. ``Tensor.backward`` walks the graph in reverse
topological order. Only the operations needed by the MIL network are
provided.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, UsageError


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _is_basic_index(key):
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, type(Ellipsis))) or k is None for k in parts)


def as_tensor(value) -> "Tensor":
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    """A float64 array plus the bookkeeping for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._parents = _parents
        self._backward = None

    # ------------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def _make(self, data, parents, backward):
        track = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=False, _parents=parents if track else ())
        if track:
            out.requires_grad = True
            out._backward = backward
        return out

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -------------------------------------------------------------- arithmetic
    def __add__(self, other):
        other = as_tensor(other)
        out = None

        def backward():
            self._accum(_unbroadcast(out.grad, self.shape))
            other._accum(_unbroadcast(out.grad, other.shape))

        out = self._make(self.data + other.data, (self, other), backward)
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = None

        def backward():
            self._accum(_unbroadcast(out.grad * other.data, self.shape))
            other._accum(_unbroadcast(out.grad * self.data, other.shape))

        out = self._make(self.data * other.data, (self, other), backward)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = None

        def backward():
            self._accum(_unbroadcast(out.grad / other.data, self.shape))
            other._accum(_unbroadcast(-out.grad * self.data / other.data**2, other.shape))

        out = self._make(self.data / other.data, (self, other), backward)
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.shape[-1] != other.shape[-2 if other.ndim > 1 else 0]:
            raise ShapeError(f"matmul: inner dimensions differ, {self.shape} @ {other.shape}")
        out = None

        def backward():
            g = out.grad
            a, b = self.data, other.data
            if self.requires_grad:
                self._accum(_unbroadcast(g @ np.swapaxes(b, -1, -2), self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(np.swapaxes(a, -1, -2) @ g, other.shape))

        out = self._make(self.data @ other.data, (self, other), backward)
        return out

    # ------------------------------------------------------------ elementwise
    def relu(self):
        mask = self.data > 0
        out = None

        def backward():
            self._accum(out.grad * mask)

        out = self._make(self.data * mask, (self,), backward)
        return out

    def sigmoid(self):
        # split by sign so exp never overflows
        x = self.data
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        out = None

        def backward():
            self._accum(out.grad * s * (1.0 - s))

        out = self._make(s, (self,), backward)
        return out

    def exp(self):
        e = np.exp(self.data)
        out = None

        def backward():
            self._accum(out.grad * e)

        out = self._make(e, (self,), backward)
        return out

    def log(self):
        out = None

        def backward():
            self._accum(out.grad / self.data)

        out = self._make(np.log(self.data), (self,), backward)
        return out

    def clip(self, lo, hi):
        """Clamp values; the gradient passes only where no clamping happened."""
        inside = (self.data >= lo) & (self.data <= hi)
        out = None

        def backward():
            self._accum(out.grad * inside)

        out = self._make(np.clip(self.data, lo, hi), (self,), backward)
        return out

    # ---------------------------------------------------------------- reduce
    def sum(self, axis=None, keepdims=False):
        out = None

        def backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.shape))

        out = self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis, keepdims=False):
        """Maximum along ``axis``; ties route the gradient to the first maximiser."""
        idx = np.argmax(self.data, axis=axis)
        idx_k = np.expand_dims(idx, axis)
        vals = np.take_along_axis(self.data, idx_k, axis=axis)
        out = None

        def backward():
            g = out.grad if keepdims else np.expand_dims(out.grad, axis)
            full = np.zeros_like(self.data)
            np.put_along_axis(full, idx_k, g, axis=axis)
            self._accum(full)

        out = self._make(vals if keepdims else np.squeeze(vals, axis), (self,), backward)
        return out

    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=axis, keepdims=True)
        out = None

        def backward():
            g = out.grad
            self._accum(s * (g - (g * s).sum(axis=axis, keepdims=True)))

        out = self._make(s, (self,), backward)
        return out

    # ----------------------------------------------------------------- shape
    def reshape(self, *shape):
        out = None

        def backward():
            self._accum(out.grad.reshape(self.shape))

        out = self._make(self.data.reshape(*shape), (self,), backward)
        return out

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)
        out = None

        def backward():
            self._accum(out.grad.transpose(inverse))

        out = self._make(self.data.transpose(axes), (self,), backward)
        return out

    def __getitem__(self, key):
        out = None

        def backward():
            full = np.zeros_like(self.data)
            if _is_basic_index(key):
                full[key] = out.grad
            else:
                np.add.at(full, key, out.grad)
            self._accum(full)

        out = self._make(self.data[key], (self,), backward)
        return out

    # -------------------------------------------------------------- backward
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires a gradient.

        Calling it twice without zeroing adds the gradients together.
        """
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor with no recorded forward graph")
        order, seen = [], set()
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
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        # interior nodes get fresh buffers so repeated calls only accumulate on leaves
        for node in order:
            if node._backward is not None:
                node.grad = np.zeros_like(node.data)
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        self.grad = self.grad + seed if self._backward is None else seed
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

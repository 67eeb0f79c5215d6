"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough ops for a transformer encoder-decoder: broadcasting arithmetic,
matmul, softmax, reductions, gathers and concatenation. Everything runs in
the dtype of the inputs (float64 throughout this project so gradient checks
are tight).
"""

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to shape (the reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad and _grad_enabled
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    # -- graph construction helpers -------------------------------------

    @staticmethod
    def _wrap(data, parents, backward):
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        return Tensor(data, requires_grad=needs, parents=parents, backward=backward)

    @staticmethod
    def _lift(value):
        return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)
        out_data = self.data + other.data

        def backward(grad, out):
            return (_unbroadcast(grad, self.shape), _unbroadcast(grad, other.shape))

        return Tensor._wrap(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._wrap(-self.data, (self,), lambda grad, out: (-grad,))

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        out_data = self.data * other.data

        def backward(grad, out):
            return (
                _unbroadcast(grad * other.data, self.shape),
                _unbroadcast(grad * self.data, other.shape),
            )

        return Tensor._wrap(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        out_data = self.data / other.data

        def backward(grad, out):
            return (
                _unbroadcast(grad / other.data, self.shape),
                _unbroadcast(-grad * self.data / (other.data * other.data), other.shape),
            )

        return Tensor._wrap(out_data, (self, other), backward)

    def matmul(self, other):
        other = Tensor._lift(other)
        out_data = np.matmul(self.data, other.data)

        def backward(grad, out):
            ga = np.matmul(grad, np.swapaxes(other.data, -1, -2))
            gb = np.matmul(np.swapaxes(self.data, -1, -2), grad)
            return (_unbroadcast(ga, self.shape), _unbroadcast(gb, other.shape))

        return Tensor._wrap(out_data, (self, other), backward)

    __matmul__ = matmul

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        old_shape = self.shape
        return Tensor._wrap(
            self.data.reshape(*shape), (self,), lambda grad, out: (grad.reshape(old_shape),)
        )

    def transpose(self, axes):
        inverse = np.argsort(axes)
        return Tensor._wrap(
            self.data.transpose(axes), (self,), lambda grad, out: (grad.transpose(inverse),)
        )

    def take_rows(self, indices):
        """Gather rows along axis 0 (embedding lookup)."""
        indices = np.asarray(indices)
        shape = self.shape

        def backward(grad, out):
            g = np.zeros(shape, dtype=np.float64)
            np.add.at(g, indices.reshape(-1), grad.reshape(-1, shape[-1]))
            return (g,)

        return Tensor._wrap(self.data[indices], (self,), backward)

    def concat_last(self, other):
        other = Tensor._lift(other)
        split = self.shape[-1]
        out_data = np.concatenate([self.data, other.data], axis=-1)

        def backward(grad, out):
            return (grad[..., :split], grad[..., split:])

        return Tensor._wrap(out_data, (self, other), backward)

    # -- reductions & nonlinearities ---------------------------------------

    def sum(self, axis=None, keepdims=False):
        shape = self.shape
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(grad, out):
            g = grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._wrap(out_data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        size = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / size)

    def exp(self):
        out_data = np.exp(self.data)
        return Tensor._wrap(out_data, (self,), lambda grad, out: (grad * out.data,))

    def log(self):
        return Tensor._wrap(np.log(self.data), (self,), lambda grad, out: (grad / self.data,))

    def sqrt(self):
        out_data = np.sqrt(self.data)
        return Tensor._wrap(out_data, (self,), lambda grad, out: (grad * 0.5 / out.data,))

    def relu(self):
        mask = self.data > 0
        return Tensor._wrap(self.data * mask, (self,), lambda grad, out: (grad * mask,))

    def sigmoid(self):
        x = self.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return Tensor._wrap(
            out_data, (self,), lambda grad, out: (grad * out.data * (1.0 - out.data),)
        )

    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def backward(grad, out):
            y = out.data
            return (y * (grad - (grad * y).sum(axis=axis, keepdims=True)),)

        return Tensor._wrap(out_data, (self,), backward)

    # -- backprop ---------------------------------------------------------

    def backward(self, seed=None):
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that requires no grad")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, pgrad in zip(node._parents, node._backward(node.grad, node)):
                if not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = pgrad
                else:
                    parent.grad = parent.grad + pgrad

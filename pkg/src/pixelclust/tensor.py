"""Reverse-mode autodiff over a small fixed operator set.

A Tensor wraps a float64 numpy array together with an optional gradient
buffer and a backward closure.  The operator set is deliberately small: it
covers exactly what the clustering network and its losses need, plus the
elementwise arithmetic used to assemble them.  Shapes are rank <= 4.

Gradient flow starts from a scalar Tensor via ``backward()``, which walks
the recorded graph in reverse topological order and accumulates into every
reachable node with ``requires_grad`` set.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "Tensor",
    "Parameter",
    "as_tensor",
    "constant",
    "tanh",
    "sigmoid",
    "sqrt",
    "sum_all",
    "mean_all",
]


class Tensor:
    """float64 array + gradient buffer + backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 4:
            raise ConfigurationError(f"tensor rank {self.data.ndim} exceeds 4")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        # Graph edges are only kept where gradients can flow.
        self._parents = tuple(p for p in parents if p.requires_grad)
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        """Add ``g`` into this node's gradient buffer."""
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        The graph is consumed: after the call the visited interior nodes
        are detached, so a second backward through them is not possible.
        """
        if self.data.shape != ():
            raise ConfigurationError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()
        # Backward closures capture their output node, so every graph is a
        # tangle of reference cycles holding large arrays the generational
        # collector is slow to notice.  Break the cycles so iteration-sized
        # graphs die by refcount; leaf gradients are untouched.
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()

    # -- elementwise arithmetic (same-shape tensors or python scalars) --

    def __add__(self, other):
        if np.isscalar(other):
            out = Tensor(self.data + other, parents=(self,))
            out._set(lambda: self.accumulate(out.grad))
            return out
        other = as_tensor(other)
        _check_same_shape(self, other, "add")
        out = Tensor(self.data + other.data, parents=(self, other))

        def bwd():
            self.accumulate(out.grad)
            other.accumulate(out.grad)

        out._set(bwd)
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))
        out._set(lambda: self.accumulate(-out.grad))
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other)) if not np.isscalar(other) else self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            out = Tensor(self.data * other, parents=(self,))
            out._set(lambda: self.accumulate(out.grad * other))
            return out
        other = as_tensor(other)
        _check_same_shape(self, other, "mul")
        out = Tensor(self.data * other.data, parents=(self, other))

        def bwd():
            self.accumulate(out.grad * other.data)
            other.accumulate(out.grad * self.data)

        out._set(bwd)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return self * (1.0 / other)
        other = as_tensor(other)
        _check_same_shape(self, other, "div")
        out = Tensor(self.data / other.data, parents=(self, other))

        def bwd():
            self.accumulate(out.grad / other.data)
            other.accumulate(-out.grad * self.data / (other.data * other.data))

        out._set(bwd)
        return out

    def _set(self, fn: Callable[[], None]) -> None:
        if self.requires_grad:
            self._backward = fn

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor with a momentum buffer and a unique name."""

    __slots__ = ("name", "momentum")

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.momentum = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """Wrap an array as a gradient-free tensor."""
    return Tensor(np.asarray(x, dtype=np.float64))


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ConfigurationError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    out = Tensor(t, parents=(x,))
    out._set(lambda: x.accumulate(out.grad * (1.0 - t * t)))
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s, parents=(x,))
    out._set(lambda: x.accumulate(out.grad * s * (1.0 - s)))
    return out


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    r = np.sqrt(x.data)
    out = Tensor(r, parents=(x,))
    out._set(lambda: x.accumulate(out.grad * 0.5 / r))
    return out


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(), parents=(x,))
    out._set(lambda: x.accumulate(np.full_like(x.data, float(out.grad))))
    return out


def mean_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.mean(), parents=(x,))
    out._set(lambda: x.accumulate(np.full_like(x.data, float(out.grad) / x.data.size)))
    return out

"""Reverse-mode automatic differentiation over numpy arrays."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np


class TapeError(RuntimeError):
    """Backward pass requested on a graph whose parameters changed after forward."""


class NumericalError(FloatingPointError):
    """A forward activation became non-finite."""


class Tensor:
    """An array node in a computation graph.

    Operations on tensors that require gradients record a closure that
    pushes the output gradient back to the inputs; :meth:`backward` replays
    those closures in reverse topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_versions")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[], None] | None = None
        self._op = _op
        self._versions: tuple = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.shape != self.data.shape:
            g = unbroadcast(g, self.data.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def _topo(self) -> list["Tensor"]:
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) * grad into every leaf's ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match output {self.data.shape}")
        order = self._topo()
        for node in order:
            for param, version in node._versions:
                if param.version != version:
                    raise TapeError(f"parameter {getattr(param, 'name', '?')} was modified after "
                                    "the forward pass; re-run forward before backward")
        for node in order:
            if node is not self and node._backward is not None:
                node.grad = None
        self.grad = grad.copy()
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        from .functional import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .functional import add, neg
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        from .functional import add, neg
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        from .functional import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .functional import neg
        return neg(self)

    def __matmul__(self, other):
        from .functional import matmul
        return matmul(self, other)

    def sum(self):
        from .functional import total
        return total(self)


class Parameter(Tensor):
    """A trainable leaf. ``version`` increments whenever its data is updated in place."""

    __slots__ = ("name", "version")

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.version = 0

    def assign(self, value: np.ndarray) -> None:
        self.data[...] = value
        self.version += 1


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def make_node(data: np.ndarray, parents: Iterable[Tensor], op: str,
              backward: Callable[[Tensor], None]) -> Tensor:
    """Wrap ``data`` as the output of ``op``; ``backward(out)`` propagates ``out.grad``."""
    parents = tuple(parents)
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite activation produced by {op}")
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
    if needs:
        out._backward = lambda: backward(out)
        out._versions = tuple((p, p.version) for p in parents if isinstance(p, Parameter))
    return out

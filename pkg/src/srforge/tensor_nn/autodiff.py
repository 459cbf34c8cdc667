"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray plus an optional gradient and a closure that
propagates incoming gradients to its parents.  backward() topologically
sorts the graph once and runs the closures in reverse order.  All
primitives keep the dtype of their inputs, so the same code runs in
float32 (training) and float64 (gradient verification).
"""

from __future__ import annotations

import contextlib
import threading
from typing import Iterable, Optional, Sequence, Union

import numpy as np

# per-thread stack so parallel inference workers do not share grad mode
_GRAD_STATE = threading.local()


def _grad_stack() -> list[bool]:
    stack = getattr(_GRAD_STATE, "stack", None)
    if stack is None:
        stack = _GRAD_STATE.stack = [True]
    return stack


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (inference fast path)."""
    stack = _grad_stack()
    stack.append(False)
    try:
        yield
    finally:
        stack.pop()


def grad_enabled() -> bool:
    return _grad_stack()[-1]


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __sub__(self, other):
        return add(self, -_wrap(other, self.dtype))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), -self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


TensorLike = Union[Tensor, np.ndarray, float, int]


def _wrap(value: TensorLike, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- primitives --------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(grad):
        if a.requires_grad:
            a.accumulate(unbroadcast(grad, a.data.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(grad, b.data.shape))

    return make_node(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(grad):
        if a.requires_grad:
            a.accumulate(unbroadcast(grad * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(grad * a.data, b.data.shape))

    return make_node(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have at least 2 axes")
    data = np.matmul(a.data, b.data)

    def backward(grad):
        if a.requires_grad:
            ga = np.matmul(grad, b.data.swapaxes(-1, -2))
            a.accumulate(unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(a.data.swapaxes(-1, -2), grad)
            b.accumulate(unbroadcast(gb, b.data.shape))

    return make_node(data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad * (x.data > 0))

    return make_node(data, (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape)

    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad.reshape(x.data.shape))

    return make_node(data, (x,), backward)


def swapaxes(x: Tensor, axis1: int, axis2: int) -> Tensor:
    data = x.data.swapaxes(axis1, axis2)

    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad.swapaxes(axis1, axis2))

    return make_node(data, (x,), backward)


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = np.broadcast_to(x.data, shape)

    def backward(grad):
        if x.requires_grad:
            x.accumulate(unbroadcast(grad, x.data.shape))

    return make_node(data, (x,), backward)


def take(x: Tensor, key) -> Tensor:
    data = x.data[key]

    def backward(grad):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, key, grad)
            x.accumulate(full)

    return make_node(data, (x,), backward)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(grad):
        if not x.requires_grad:
            return
        g = grad
        if not keepdims and axis is not None:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(a % x.data.ndim for a in axes):
                g = np.expand_dims(g, ax)
        x.accumulate(np.broadcast_to(g, x.data.shape).copy())

    return make_node(data, (x,), backward)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    total = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return tensor_sum(x, axis=axis, keepdims=keepdims) * float(1.0 / total)


def max_along(x: Tensor, axis: int) -> Tensor:
    """Max over one axis; gradient flows to the first argmax (ties broken
    by lowest index) so backward is deterministic."""
    data = x.data.max(axis=axis)
    idx = np.expand_dims(x.data.argmax(axis=axis), axis)

    def backward(grad):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.put_along_axis(full, idx, np.expand_dims(grad, axis), axis=axis)
            x.accumulate(full)

    return make_node(data, (x,), backward)


def concatenate(tensors: Iterable[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * grad.ndim
                index[axis] = slice(lo, hi)
                t.accumulate(grad[tuple(index)])

    return make_node(data, tuple(tensors), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    data = table.data[ids]

    def backward(grad):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids, grad)
            table.accumulate(full)

    return make_node(data, (table,), backward)

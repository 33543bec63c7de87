"""Dense float64 tensors with tape-based reverse-mode differentiation.

Tensors are immutable. Operations performed while a :class:`Tape` is active
(and that touch at least one tracked tensor) are recorded; :meth:`Tape.gradient`
replays the record in exact reverse order.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _freeze(arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError("operation produced NaN or Inf")
    arr.flags.writeable = False
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = _freeze(arr)
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        if not isinstance(arr, np.ndarray) or arr.dtype != np.float64:
            arr = np.array(arr, dtype=np.float64)
        t.data = _freeze(arr)
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, cols):
        return take_cols(self, cols)


TensorLike = Tensor | np.ndarray | float | int


def as_tensor(x: TensorLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.array(x, dtype=np.float64))


@dataclass
class _Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; nesting is allowed and only the innermost tape
    records.
    """

    nodes: list[_Node] = field(default_factory=list)
    _tracked: set[int] = field(default_factory=set)
    _keep: list[Tensor] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            self._tracked.add(id(t))
            self._keep.append(t)

    def is_tracked(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def _record(self, output: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
        self.nodes.append(_Node(inputs, output, vjp))
        self._tracked.add(id(output))

    def gradient(self, loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
        """Gradients of a scalar ``loss`` w.r.t. each of ``params``.

        Unreachable parameters get a zero gradient.
        """
        if loss.data.size != 1:
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
        params = list(params)
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        out = []
        for p in params:
            g = grads.get(id(p))
            out.append(np.zeros_like(p.data) if g is None else np.array(g, dtype=np.float64))
        return out


_local = threading.local()


def _stack() -> list[Tape]:
    s = getattr(_local, "stack", None)
    if s is None:
        s = _local.stack = []
    return s


def active_tape() -> Tape | None:
    s = _stack()
    return s[-1] if s else None


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    return tape.gradient(loss, params)


def _emit(arr: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor._wrap(arr)
    tape = active_tape()
    if tape is not None and any(tape.is_tracked(t) for t in inputs):
        tape._record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---- primitives -----------------------------------------------------------

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return _emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    A, B = a.data, b.data
    return _emit(A * B, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def square(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    A = a.data
    return _emit(A * A, (a,), lambda g: (2.0 * A * g,))


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softplus(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    y = np.logaddexp(0.0, x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _emit(y, (a,), lambda g: (g * sig,))


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _emit(y, (a,), lambda g: (g * y,))


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    if (x <= 0).any():
        raise NonFiniteError("log of non-positive value")
    return _emit(np.log(x), (a,), lambda g: (g / x,))


def clip(a: TensorLike, lo: float, hi: float) -> Tensor:
    """Clamp; gradient passes only where the input lies inside [lo, hi]."""
    a = as_tensor(a)
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _emit(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def minimum(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"minimum: shapes {a.shape} and {b.shape} differ")
    pick_a = a.data <= b.data
    return _emit(np.where(pick_a, a.data, b.data), (a, b), lambda g: (g * pick_a, g * ~pick_a))


def reduce_sum(a: TensorLike, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return _emit(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.data.sum(axis=axis, keepdims=True)
    return _emit(out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def reduce_mean(a: TensorLike, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    n = a.data.size if axis is None else shape[axis]
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    if axis is None:
        return _emit(np.array(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),))
    out = a.data.mean(axis=axis, keepdims=True)
    return _emit(out, (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),))


def concat(parts: Sequence[TensorLike], axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(p) for p in parts)
    if not ts:
        raise ShapeError("concat of nothing")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _emit(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_cols(a: TensorLike, cols) -> Tensor:
    """Column slice of a 2-D tensor (``a[:, cols]``)."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"column slicing needs a 2-D tensor, got {a.shape}")
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, cols] = g
        return (full,)

    return _emit(a.data[:, cols], (a,), vjp)


def reshape(a: TensorLike, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None
    return _emit(out, (a,), lambda g: (g.reshape(old),))


def stop_gradient(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return Tensor._wrap(a.data.copy())

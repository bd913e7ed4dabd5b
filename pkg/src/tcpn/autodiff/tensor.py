"""Dense tensors and the recording tape used for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

_ACTIVE_GRAPHS: list["Graph"] = []


class Graph:
    """Tape of op records in execution order.

    Ops executed while a graph is active (``with Graph() as g:``) append a
    record ``(output, backward_fn)`` whenever one of their inputs requires a
    gradient. Execution order is a topological order, so ``backward`` walks
    the tape in reverse and visits every record exactly once.
    """

    def __init__(self) -> None:
        self.records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Graph":
        _ACTIVE_GRAPHS.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_GRAPHS.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, output: "Tensor", grad: np.ndarray | None = None) -> None:
        if grad is None:
            if output.data.size != 1:
                raise ValueError(f"backward needs an explicit grad for shape {output.shape}")
            grad = np.ones_like(output.data)
        output.grad = np.asarray(grad, dtype=output.data.dtype)
        for out, fn in reversed(self.records):
            if out.grad is not None:
                fn(out.grad)


def active_graph() -> Graph | None:
    return _ACTIVE_GRAPHS[-1] if _ACTIVE_GRAPHS else None


class Tensor:
    """An n-dimensional array with an optional gradient.

    Gradients are never updated in place: accumulation always rebinds
    ``grad`` to a fresh array, so aliasing between gradient buffers is safe.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr)


def make_result(data: np.ndarray, parents: tuple[Tensor, ...],
                backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op's output, recording ``backward`` on the active tape if needed."""
    out = Tensor(data)
    graph = active_graph()
    if graph is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        graph.records.append((out, backward))
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    grad = unbroadcast(grad, t.data.shape)
    if grad.dtype != t.data.dtype:
        grad = grad.astype(t.data.dtype)
    t.grad = grad if t.grad is None else t.grad + grad

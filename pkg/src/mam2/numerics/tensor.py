"""Tensor container and the reverse-mode engine.

Every differentiable op builds its output with :func:`make_result`, which
records the parents and a closure mapping the output gradient to one
gradient per parent. :func:`backward` walks that record in reverse
topological order. Nothing is global except two context variables: the
default scalar width and a switch that disables recording.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterator, Sequence

import numpy as np

from ..errors import UsageError

_DTYPES = {"float32": np.float32, "float64": np.float64}

_dtype_var: contextvars.ContextVar = contextvars.ContextVar("mam2_dtype", default=np.float32)
_grad_var: contextvars.ContextVar = contextvars.ContextVar("mam2_grad", default=True)


def default_dtype():
    return _dtype_var.get()


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the default scalar type (``"float32"`` or ``"float64"``)."""
    if name not in _DTYPES:
        raise UsageError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    token = _dtype_var.set(_DTYPES[name])
    try:
        yield
    finally:
        _dtype_var.reset(token)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them; results never require grad."""
    token = _grad_var.set(False)
    try:
        yield
    finally:
        _grad_var.reset(token)


def grad_enabled() -> bool:
    return _grad_var.get()


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 1000  # keep numpy from hijacking mixed binary ops

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        else:
            arr = arr.astype(default_dtype(), copy=False)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    # -- basic accessors -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar; implementations live in ops.py -----------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise UsageError("division is only defined by a python scalar")
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.getitem(self, key)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, finished = stack.pop()
        if finished:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, retain_graph: bool = False) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(.) into ``.grad`` of every leaf that requires grad.

    Leaf gradients accumulate across calls; clear them with
    :func:`zero_grad` between steps. Returns ``{leaf: grad}``.
    """
    if not isinstance(loss, Tensor) or loss.ndim != 0:
        shape = getattr(loss, "shape", None)
        raise UsageError(f"backward needs a scalar (rank-0) tensor, got shape {shape}")
    if not loss.requires_grad:
        return {}
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        if node._backward is None:
            if node.requires_grad and node.grad is not None:
                leaves[node] = node.grad
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.shape:
                raise AssertionError(f"gradient shape {g.shape} != operand shape {parent.shape}")
            parent.grad = g if parent.grad is None else parent.grad + g
        if not retain_graph:
            node.grad = None
            node._parents = ()
            node._backward = None
    return leaves


def zero_grad(params) -> None:
    for p in params:
        p.grad = None

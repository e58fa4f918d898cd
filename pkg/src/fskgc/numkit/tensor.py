"""Dense float64 tensors with a dynamic tape for reverse-mode gradients.

Every operation in :mod:`fskgc.numkit.ops` records a node on the innermost
active :class:`Tape` when any input requires a gradient.  Recording order is
a topological order of the computation, so walking the node list backwards
visits consumers before producers and a single reverse sweep suffices.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, NumericError


class _TapeStacks(threading.local):
    """Per-thread tape stack: a tape is confined to one logical thread."""

    def __init__(self):
        self.stack: list["Tape"] = []


_TAPES = _TapeStacks()
_CHECKED = False


def set_checked(flag: bool) -> None:
    """Enable or disable NaN/Inf detection on every operation output."""
    global _CHECKED
    _CHECKED = bool(flag)


def is_checked() -> bool:
    return _CHECKED


class Tensor:
    """A dense n-dimensional float64 array, optionally carrying a gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if _CHECKED and not np.all(np.isfinite(arr)):
            raise NumericError("tensor holds non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self, requires_grad: bool = False) -> "Tensor":
        """A copy-free view holding the same values but no tape history."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = requires_grad
        out.grad = None
        out._tape = None
        return out

    def copy(self, requires_grad: bool | None = None) -> "Tensor":
        rg = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(self.data.copy(), requires_grad=rg)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Arithmetic sugar; the heavy lifting lives in ops.py.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "backward_fn")

    def __init__(self, out: Tensor, backward_fn: Callable):
        self.out = out
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations, confined to one logical thread."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPES.stack.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise ContractError("tape stack corrupted: mismatched exit")

    def clear(self) -> None:
        self.nodes.clear()


def active_tape() -> Tape | None:
    stack = _TAPES.stack
    return stack[-1] if stack else None


def record(out: Tensor, backward_fn: Callable) -> Tensor:
    """Attach ``out`` to the innermost tape; no-op outside a tape context.

    ``backward_fn(g)`` must return an iterable of ``(input_tensor, grad)``
    pairs for the inputs that require gradients.
    """
    tape = active_tape()
    if tape is not None:
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(_Node(out, backward_fn))
    return out


def _sweep(loss: Tensor) -> dict[int, tuple[Tensor, np.ndarray]]:
    if loss.data.shape != ():
        raise ContractError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    tape = loss._tape
    if tape is None:
        raise ContractError("loss is not connected to any tape")
    pending: dict[int, tuple[Tensor, np.ndarray]] = {
        id(loss): (loss, np.ones((), dtype=np.float64))
    }
    for node in reversed(tape.nodes):
        entry = pending.get(id(node.out))
        if entry is None:
            continue
        g = entry[1]
        for inp, gin in node.backward_fn(g):
            key = id(inp)
            prev = pending.get(key)
            if prev is None:
                pending[key] = (inp, np.asarray(gin, dtype=np.float64))
            else:
                pending[key] = (inp, prev[1] + gin)
    return pending


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    Repeated calls without clearing gradients accumulate.
    """
    pending = _sweep(loss)
    for tensor, g in pending.values():
        if tensor.requires_grad:
            if _CHECKED and not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient encountered")
            tensor.grad = g if tensor.grad is None else tensor.grad + g


def grad(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` w.r.t. ``wrt`` without touching ``.grad`` buffers.

    Tensors unreachable from the loss yield zero gradients.
    """
    pending = _sweep(loss)
    out = []
    for t in wrt:
        entry = pending.get(id(t))
        out.append(
            np.zeros_like(t.data) if entry is None else entry[1].reshape(t.data.shape)
        )
    return out


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None

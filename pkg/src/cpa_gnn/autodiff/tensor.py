"""Dense float64 tensors and the tape that records their computation history.

Recording only happens inside an active :class:`Tape` context and only for
operations that have at least one input with ``requires_grad``.  Outside a
tape every operation is a plain numpy evaluation, which is what evaluation
passes and the property checks use.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class TapeError(RuntimeError):
    pass


class Tensor:
    """A dense row-major array of 64-bit floats with an optional gradient."""

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    # Operator sugar; the actual rules live in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _lift(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_lift(other), self)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scalar_mul(self, float(other))
        return ops.mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scalar_mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, _lift(other))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class TapeEntry:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of operations for one forward/backward cycle.

    Use as a context manager; every recorded operation is appended in
    execution order, so the entry list is topologically sorted by
    construction.  A tape is single use: :meth:`backward` clears it.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        output._tape = self
        self.entries.append(TapeEntry(inputs, output, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(e.output) for e in self.entries}
        leaves: dict[int, Tensor] = {}

        for entry in reversed(self.entries):
            g_out = grads.pop(id(entry.output), None)
            if g_out is None:
                continue
            g_inputs = entry.backward(g_out)
            for inp, g in zip(entry.inputs, g_inputs):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                if key not in produced:
                    leaves[key] = inp

        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g

        for entry in self.entries:
            entry.output._tape = None
        self.entries.clear()


_local = threading.local()


def _stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def make_output(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap ``data`` and record it on the active tape when gradients are needed."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that ``loss`` depends on."""
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise TapeError("loss is not on a tape; run the forward pass inside `with Tape():`")
    loss._tape.backward(loss)

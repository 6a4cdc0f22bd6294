"""Reverse-mode tape over a small, fixed set of dense primitives.

Every primitive records one node on the active :class:`Tape`.  Backward
walks the recorded nodes in exact reverse order, so each local gradient
rule can be audited against finite differences in isolation.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional

import numpy as np

_local = threading.local()


def _tape_stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class Tensor:
    """A dense float64 array that may take part in a recorded computation."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, parents=(), op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.parents: tuple = tuple(parents)
        self.backward_fn: Optional[Callable[[np.ndarray], None]] = None
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __float__(self) -> float:
        if self.data.size != 1:
            raise TypeError(f"only size-1 tensors convert to float, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(op={self.op!r}, shape={self.shape})"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


class ParamTensor(Tensor):
    """A named learnable leaf.  ``grad`` always has the shape of ``data``."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, op="param")
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"ParamTensor({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; primitives evaluated inside the ``with`` block
    are recorded here.  Tapes are thread-local, so independent tapes over
    disjoint data may run concurrently.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Tensor) -> None:
        self.nodes.append(node)

    def params(self) -> list[ParamTensor]:
        seen: dict[int, ParamTensor] = {}
        for node in self.nodes:
            for p in node.parents:
                if isinstance(p, ParamTensor) and id(p) not in seen:
                    seen[id(p)] = p
        return list(seen.values())

    def backward(self, output: Tensor) -> dict[str, np.ndarray]:
        """Backpropagate from a scalar ``output``.

        Parameter gradients are reset before the pass and the resulting
        gradients are returned keyed by parameter name.
        """
        if output.data.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
        params = self.params()
        for p in params:
            p.zero_grad()
        for node in self.nodes:
            node.grad = None
        output.grad = np.ones_like(output.data)
        for node in reversed(self.nodes):
            if node.grad is not None and node.backward_fn is not None:
                node.backward_fn(node.grad)
        return {p.name: p.grad.copy() for p in params}


def _record(data, parents: Iterable[Tensor], op: str, backward: Callable) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), parents=parents, op=op)
    out.backward_fn = backward
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out)
    return out

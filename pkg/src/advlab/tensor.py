"""Dense tensors and the gradient tape.

A Tensor wraps a float numpy array (float32 in production; float64 is
allowed so gradient checks can run at high precision). Primitive ops in
advlab.ops record a Node on the active Tape for every executed primitive;
Tape.backward replays those records in reverse to populate gradients.

Tensors are immutable once produced by an op. A Tape supports exactly one
backward pass.
"""

from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when a primitive receives incompatibly shaped inputs."""

    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not (
            isinstance(data, np.ndarray) and arr.dtype in (np.float32, np.float64)
        ):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Node:
    """One executed primitive: inputs, output, and its backward rule."""

    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(
        self,
        op: str,
        inputs: Sequence[Tensor],
        output: Tensor,
        backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    ):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward = backward


_TAPE_STACK: list = []


def active_tape() -> Optional["Tape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of executed primitives (inputs always precede use)."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._tracked: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def watches(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def record(self, node: Node) -> None:
        self.nodes.append(node)
        self._tracked.add(id(node.output))

    def backward(self, loss: Tensor) -> None:
        """Populate .grad of every requires_grad tensor reachable from loss.

        loss must be the scalar output of this tape's final node.
        """
        if self._consumed:
            raise TapeError("tape already consumed by a previous backward pass")
        if loss.size != 1:
            raise TapeError(f"loss must be scalar, got shape {tuple(loss.shape)}")
        if not self.nodes or self.nodes[-1].output is not loss:
            raise TapeError("loss is not the output of this tape's final node")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            gout = grads.pop(id(node.output), None)
            if gout is None:
                continue
            gins = node.backward(gout)
            for t, g in zip(node.inputs, gins):
                if g is None:
                    continue
                if t.requires_grad:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += g
                elif id(t) in self._tracked:
                    prev = grads.get(id(t))
                    grads[id(t)] = g if prev is None else prev + g


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)

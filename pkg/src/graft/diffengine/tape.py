"""Define-by-run reverse-mode tape.

A :class:`Tape` is opened as a context manager; every primitive op evaluated
inside it whose inputs require gradients is appended to the tape together
with its forward and backward rules.  ``tape.backward(loss)`` walks the
records in reverse and leaves ``grad`` on every trainable
:class:`ParamTensor` the loss depends on.  Outside a tape, ops only compute
values.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from graft.errors import NumericalError, TapeError

_state = threading.local()


def active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A value node.  ``requires_grad`` marks nodes the tape differentiates through."""

    __slots__ = ("value", "requires_grad", "__weakref__")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the real definitions live in ops
    def __add__(self, other):
        from graft.diffengine import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from graft.diffengine import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from graft.diffengine import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from graft.diffengine import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from graft.diffengine import ops
        return ops.matmul(self, other)


class ParamTensor(Tensor):
    """Named parameter.  Frozen tensors (``trainable=False``) never get a grad."""

    __slots__ = ("name", "trainable", "grad")

    def __init__(self, name: str, values, trainable: bool = True):
        super().__init__(np.array(values, dtype=np.float64), requires_grad=trainable)
        if not np.all(np.isfinite(self.value)):
            raise NumericalError(f"parameter {name!r} has non-finite values")
        self.name = name
        self.trainable = trainable
        self.grad: np.ndarray | None = None

    @property
    def values(self) -> np.ndarray:
        return self.value

    @values.setter
    def values(self, new) -> None:
        new = np.asarray(new, dtype=np.float64)
        if new.shape != self.value.shape:
            raise ValueError(f"{self.name}: shape {new.shape} != {self.value.shape}")
        self.value = new

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        self.requires_grad = flag
        if not flag:
            self.grad = None

    def __repr__(self) -> str:
        return f"ParamTensor({self.name!r}, shape={self.shape}, trainable={self.trainable})"


@dataclass
class _Record:
    out: Tensor
    parents: tuple[Tensor, ...]
    forward: Callable[..., np.ndarray]
    backward: Callable[..., Sequence[np.ndarray | None]]


class Tape:
    def __init__(self) -> None:
        self.records: list[_Record] = []
        self._params: dict[int, ParamTensor] = {}
        self._consumed = False

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def record(self, out, parents, forward, backward) -> None:
        for p in parents:
            if isinstance(p, ParamTensor) and p.trainable:
                self._params.setdefault(id(p), p)
        self.records.append(_Record(out, tuple(parents), forward, backward))

    @property
    def params(self) -> list[ParamTensor]:
        return list(self._params.values())

    def backward(self, loss: Tensor) -> list[ParamTensor]:
        """Populate ``grad`` on every trainable parameter reachable from ``loss``."""
        if self._consumed:
            raise TapeError("backward already called on this tape; run a new forward pass")
        if loss.value.size != 1:
            raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
        if not np.isfinite(loss.value).all():
            raise NumericalError(f"loss is not finite: {float(loss.value.reshape(-1)[0])}")
        if not any(r.out is loss for r in reversed(self.records)):
            raise TapeError("loss was not produced by a taped forward pass")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            parent_grads = rec.backward(g, rec.out.value, *(p.value for p in rec.parents))
            for p, pg in zip(rec.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

        touched = []
        for key, param in self._params.items():
            g = grads.get(key)
            param.grad = np.zeros_like(param.value) if g is None else np.array(g, dtype=np.float64)
            if not np.all(np.isfinite(param.grad)):
                raise NumericalError(f"non-finite gradient for {param.name!r}")
            touched.append(param)
        return touched

    def replay(self, loss: Tensor) -> np.ndarray:
        """Recompute every recorded op from current leaf values; return the loss value.

        Intermediate values on the tape are refreshed in place, so a replay
        after a parameter update also refreshes what ``backward`` would see.
        """
        for rec in self.records:
            rec.out.value = rec.forward(*(p.value for p in rec.parents))
        return loss.value

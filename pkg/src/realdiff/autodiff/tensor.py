"""Dense float64 tensors and the append-only tape that records them.

Every differentiable operation goes through :func:`record`, which appends a
node holding the input node ids and a vector-Jacobian closure.  Backward walks
the node list once, in reverse insertion order.

    with Tape() as tape:
        loss = ops.mse(model(x), y)
    grads = tape.backward(loss)
    grads[weight]            # ndarray, zeros if weight was unreachable
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, order="C")
        self.data = arr
        self.requires_grad = requires_grad
        self.node: int | None = None
        self.tape: Tape | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr if arr.dtype == np.float64 else arr.astype(np.float64)
        t.requires_grad = False
        t.node = None
        t.tape = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={list(self.shape)}{tag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other) if isinstance(other, Tensor) else ops.add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other) if isinstance(other, Tensor) else ops.add_scalar(self, -other)

    def __rsub__(self, other):
        from . import ops
        return ops.add_scalar(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other) if isinstance(other, Tensor) else ops.scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        from . import ops
        return ops.scale(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None):
        from . import ops
        return ops.reduce_sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.reduce_mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    kind: str
    inputs: tuple[int | None, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None


class Gradients:
    """Result of a backward pass; indexable by tensor."""

    def __init__(self, tape: "Tape", grads: dict[int, np.ndarray]):
        self._tape = tape
        self.by_node = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        nid = self._tape.lookup(t)
        g = self.by_node.get(nid) if nid is not None else None
        return np.zeros(t.shape) if g is None else g

    def for_params(self, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
        return {k: self[p] for k, p in params.items()}


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self._leaf_ids: dict[int, int] = {}
        self._leaf_refs: list[Tensor] = []  # keeps id() of leaves unique while the tape lives

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def lookup(self, t: Tensor) -> int | None:
        if t.tape is self:
            return t.node
        return self._leaf_ids.get(id(t))

    def _input_node(self, t: Tensor) -> int | None:
        if t.tape is self:
            return t.node
        if not t.requires_grad:
            return None
        nid = self._leaf_ids.get(id(t))
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(Node("leaf", (), None))
            self._leaf_ids[id(t)] = nid
            self._leaf_refs.append(t)
        return nid

    def backward(self, loss: Tensor) -> Gradients:
        if loss.tape is not self:
            raise ContractError("loss was not produced on this tape")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.node] = np.ones(loss.shape)
        for nid in range(loss.node, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            if node.vjp is None:
                continue
            for src, gi in zip(node.inputs, node.vjp(g)):
                if src is None or gi is None:
                    continue
                prev = grads[src]
                grads[src] = gi if prev is None else prev + gi
        return Gradients(self, {i: g for i, g in enumerate(grads) if g is not None})


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record(kind: str, inputs: Sequence[Tensor], out: np.ndarray,
           vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap ``out`` as a Tensor and, if any input is tracked, append a node."""
    result = Tensor._wrap(out)
    tape = active_tape()
    if tape is None:
        return result
    ids = tuple(tape._input_node(t) for t in inputs)
    if all(i is None for i in ids):
        return result
    result.node = len(tape.nodes)
    result.tape = tape
    tape.nodes.append(Node(kind, ids, vjp))
    return result

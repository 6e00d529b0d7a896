"""Dense tensors and a define-by-run reverse-mode tape.

Operations record themselves onto the innermost active :class:`Graph` when at
least one of their inputs requires a gradient. Outside a ``with Graph():``
block nothing is recorded, which is how teacher forwards and inference run.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class ContractError(RuntimeError):
    """Raised when a caller violates an operation's preconditions."""


class Precision(enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.SINGLE else np.float64)

    @classmethod
    def of(cls, value: "Precision | str | np.dtype | type") -> "Precision":
        if isinstance(value, Precision):
            return value
        if isinstance(value, str) and value in ("single", "double"):
            return cls(value)
        dt = np.dtype(value)
        if dt == np.float32:
            return cls.SINGLE
        if dt == np.float64:
            return cls.DOUBLE
        raise ValueError(f"unsupported precision {value!r}")


class Tensor:
    """A dense real array with optional gradient tracking.

    ``name`` is only meaningful for leaves that are trained parameters; it is
    the key under which :func:`backward` reports the gradient.
    """

    __slots__ = ("data", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64 if dtype is None else dtype)
        if arr.ndim > 4:
            raise DimensionError(f"rank {arr.ndim} exceeds 4")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # arithmetic sugar; the implementations live in ops
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

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent: float):
        from . import ops
        return ops.power(self, exponent)


def _raise_item(shape):
    raise ContractError(f"item() needs a single-element tensor, got shape {shape}")


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass(eq=False)
class Graph:
    """Tape of recorded operations, in execution (hence topological) order."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Graph":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _stack().pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)


_local = threading.local()


def _stack() -> list[Graph]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_graph() -> Graph | None:
    stack = _stack()
    return stack[-1] if stack else None


class no_grad:
    """Suspend recording, e.g. for the teacher forward inside a training step."""

    def __enter__(self):
        self._saved = list(_stack())
        _stack().clear()

    def __exit__(self, *exc):
        _stack().extend(self._saved)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else np.float64))


def record(op: str, inputs: Iterable[Tensor], out_data: np.ndarray, vjp) -> Tensor:
    """Wrap ``out_data`` and put a node on the active tape if needed."""
    inputs = tuple(inputs)
    out = Tensor(out_data)
    graph = active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(op, inputs, out, vjp)
        out._node = node
        graph.nodes.append(node)
    return out


def backward(graph: Graph, loss: Tensor, params: Mapping[str, Tensor] | Iterable[Tensor]) -> dict[str, np.ndarray]:
    """Reverse sweep over ``graph`` seeded at the scalar ``loss``.

    Returns a gradient for every entry in ``params`` (keyed by name); a
    parameter that the loss does not reach gets zeros.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if isinstance(params, Mapping):
        named = dict(params)
    else:
        named = {}
        for p in params:
            if p.name is None:
                raise ContractError("parameters passed by value must carry a name")
            named[p.name] = p

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss._node is not None:
        for node in reversed(graph.nodes):
            g_out = grads.pop(id(node.output), None)
            if g_out is None:
                continue
            in_grads = node.vjp(g_out)
            for inp, g in zip(node.inputs, in_grads):
                if g is None or not inp.requires_grad:
                    continue
                if g.shape != inp.shape:
                    raise DimensionError(f"{node.op}: adjoint shape {g.shape} != input shape {inp.shape}")
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g

    out = {}
    for name, p in named.items():
        g = grads.get(id(p))
        out[name] = np.zeros_like(p.data) if g is None else g.astype(p.dtype, copy=False)
    return out

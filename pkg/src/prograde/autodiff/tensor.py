"""Dense tensor with a scoped, reverse-mode recording graph.

Values are plain numpy arrays.  Operations only record when executed inside a
:class:`Graph` context and at least one input is tracked (a leaf created with
``requires_grad=True`` or the output of a recorded node).  Backward rules are
written in terms of recorded operations themselves, so a backward pass run with
``create_graph=True`` can be differentiated again.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Iterable, Sequence

import numpy as np

_state = threading.local()


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when a primitive produces NaN or Inf."""


class GraphConsumedError(RuntimeError):
    """Raised when a graph is differentiated again after its buffers were freed."""


def _get(name, default):
    return getattr(_state, name, default)


def get_default_dtype() -> np.dtype:
    return np.dtype(_get("dtype", np.float32))


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _state.dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    prev = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def debug_enabled() -> bool:
    return _get("debug", False)


def set_debug(flag: bool) -> None:
    """Toggle NaN/Inf checking after every primitive."""
    _state.debug = bool(flag)


@contextlib.contextmanager
def debug_mode(flag: bool = True):
    prev = debug_enabled()
    set_debug(flag)
    try:
        yield
    finally:
        set_debug(prev)


def current_graph() -> Graph | None:
    return _get("graph", None)


@contextlib.contextmanager
def no_grad():
    """Suspend recording; operations return untracked tensors."""
    prev = current_graph()
    _state.graph = None
    try:
        yield
    finally:
        _state.graph = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, _node=None):
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(get_default_dtype())
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.node = _node

    # -- introspection -----------------------------------------------------
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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self.node is not None

    @property
    def node_id(self) -> int | None:
        return None if self.node is None else self.node.index

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        extra = f", node={self.node.index}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{extra})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        from . import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F

        return F.add(F.neg(self), other)

    def __mul__(self, other):
        from . import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F

        if isinstance(other, Tensor):
            return F.mul(self, F.pow(other, -1.0))
        return F.scale(self, 1.0 / other)

    def __neg__(self):
        from . import functional as F

        return F.neg(self)

    def __pow__(self, exponent: float):
        from . import functional as F

        return F.pow(self, exponent)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F

        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F

        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype or get_default_dtype()))


class Node:
    """One primitive application inside a graph."""

    __slots__ = ("fn", "inputs", "attrs", "saved", "output", "index", "graph")

    def __init__(self, fn, inputs, attrs):
        self.fn = fn
        self.inputs = inputs
        self.attrs = attrs
        self.saved = None
        self.output = None
        self.index = -1
        self.graph = None


class Function:
    """Primitive: numpy forward plus a backward rule over tensors."""

    @staticmethod
    def forward(ctx: Node, *arrays, **attrs) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def backward(ctx: Node, grad: Tensor) -> Sequence[Tensor | None]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **attrs) -> Tensor:
        node = Node(cls, inputs, attrs)
        out = cls.forward(node, *(t.data for t in inputs), **attrs)
        if debug_enabled() and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{cls.__name__} produced non-finite values")
        graph = current_graph()
        if graph is not None and any(t.tracked for t in inputs):
            result = Tensor(out, _node=node)
            graph._record(node, result)
            return result
        return Tensor(out)


class Graph:
    """Ordered record of primitive applications.

    Use as a context manager; every tracked operation executed inside the
    block is appended in execution order, which is also a topological order.
    """

    _ids = itertools.count()

    def __init__(self):
        self.id = next(Graph._ids)
        self.nodes: list[Node] = []
        self._leaves: dict[int, Tensor] = {}
        self.consumed = False
        self._prev = None

    def __enter__(self):
        self._prev = current_graph()
        _state.graph = self
        return self

    def __exit__(self, *exc):
        _state.graph = self._prev
        self._prev = None
        return False

    @contextlib.contextmanager
    def _recording(self):
        prev = current_graph()
        _state.graph = self
        try:
            yield
        finally:
            _state.graph = prev

    def _record(self, node: Node, out: Tensor) -> None:
        if self.consumed:
            raise GraphConsumedError("cannot record into a consumed graph")
        node.index = len(self.nodes)
        node.graph = self
        node.output = out
        self.nodes.append(node)
        for t in node.inputs:
            if t.node is None and t.requires_grad:
                self._leaves.setdefault(id(t), t)

    @property
    def leaves(self) -> list[Tensor]:
        """Leaf tensors with ``requires_grad`` that were used while recording."""
        return list(self._leaves.values())

    def grad(
        self,
        loss: Tensor,
        wrt: Iterable[Tensor],
        create_graph: bool = False,
        retain_graph: bool | None = None,
    ) -> list[Tensor]:
        """Gradients of a scalar ``loss`` with respect to each of ``wrt``.

        Unreachable inputs get zero gradients.  With ``create_graph`` the
        backward operations are themselves recorded into this graph.
        """
        wrt = list(wrt)
        if self.consumed:
            raise GraphConsumedError("graph already consumed by a previous backward pass")
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if loss.node is None or loss.node.graph is not self:
            raise ValueError("loss was not recorded in this graph")
        if retain_graph is None:
            retain_graph = create_graph

        wanted = {id(t) for t in wrt}
        found: dict[int, Tensor] = {}
        grads: dict[int, Tensor] = {id(loss): Tensor(np.ones_like(loss.data))}
        snapshot = self.nodes[: loss.node.index + 1]
        ctx = self._recording() if create_graph else no_grad()
        with ctx:
            for node in reversed(snapshot):
                key = id(node.output)
                g = grads.pop(key, None)
                if g is None:
                    continue
                if key in wanted:
                    found[key] = g
                if not any(t.tracked for t in node.inputs):
                    continue
                in_grads = node.fn.backward(node, g)
                for t, gi in zip(node.inputs, in_grads):
                    if gi is None or not t.tracked:
                        continue
                    k = id(t)
                    prev = grads.get(k)
                    grads[k] = gi if prev is None else prev + gi
        for key in wanted:
            if key not in found and key in grads:
                found[key] = grads[key]

        if not retain_graph:
            self._release()
        out = []
        for t in wrt:
            g = found.get(id(t))
            out.append(Tensor(np.zeros_like(t.data)) if g is None else g)
        return out

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] | None = None, **kw) -> dict[Tensor, Tensor]:
        """Gradient map keyed by parameter tensor (all recorded leaves by default)."""
        params = self.leaves if wrt is None else list(wrt)
        return dict(zip(params, self.grad(loss, params, **kw)))

    def replay(self) -> list[np.ndarray]:
        """Re-execute every recorded node from the current leaf values."""
        values: dict[int, np.ndarray] = {}
        outs = []
        for node in self.nodes:
            arrays = [values.get(id(t), t.data) for t in node.inputs]
            fresh = Node(node.fn, node.inputs, node.attrs)
            out = node.fn.forward(fresh, *arrays, **node.attrs)
            values[id(node.output)] = out
            outs.append(out)
        return outs

    def _release(self) -> None:
        for node in self.nodes:
            node.saved = None
        self.consumed = True


@contextlib.contextmanager
def current_graph_or_new():
    """Yield the active recording graph, opening a fresh one if none is active."""
    graph = current_graph()
    if graph is not None:
        yield graph
        return
    with Graph() as graph:
        yield graph


def grad(loss: Tensor, wrt, create_graph: bool = False, retain_graph: bool | None = None) -> list[Tensor]:
    """Differentiate ``loss`` in the graph it was recorded in."""
    if loss.node is None:
        raise ValueError("loss is not part of a recording")
    return loss.node.graph.grad(loss, wrt, create_graph=create_graph, retain_graph=retain_graph)

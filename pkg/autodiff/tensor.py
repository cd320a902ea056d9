"""
Dense float64 tensors and the dynamic graph that differentiates them
"""
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op"""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        listed = " and ".join(str(list(s)) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {listed}")


class GraphError(RuntimeError):
    """Raised on misuse of the active graph (non-scalar loss, consumed graph, mixed graphs)"""


@dataclass
class Node:
    tag: str
    inputs: Tuple["Tensor", ...]
    backward: BackwardRule


class Graph:
    """Append-only tape; a node's inputs always precede it"""

    def __init__(self):
        self.nodes: List[Node] = []
        self.consumed = False

    def record(self, tag: str, inputs: Tuple["Tensor", ...], backward: BackwardRule) -> int:
        if self.consumed:
            raise GraphError(f"cannot record '{tag}' on a consumed graph")
        self.nodes.append(Node(tag, inputs, backward))
        return len(self.nodes) - 1

    def release(self):
        """Drop saved values; the graph cannot be differentiated afterwards"""
        self.nodes = []
        self.consumed = True

    def __len__(self):
        return len(self.nodes)


_state = threading.local()


def _active() -> Graph:
    graph = getattr(_state, "graph", None)
    if graph is None or graph.consumed:
        graph = Graph()
        _state.graph = graph
    return graph


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Evaluate without recording anything on the graph"""
    previous = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


@contextmanager
def fresh_graph():
    """Record into a new graph for the duration of the block"""
    previous = getattr(_state, "graph", None)
    _state.graph = Graph()
    try:
        yield _state.graph
    finally:
        _state.graph = previous


class Tensor:
    """Row-major float64 array with an optional gradient slot and graph handle"""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[int] = None
        self.graph: Optional[Graph] = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out.node = None
        out.graph = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self.node is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, ())
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"

    # operators delegate to the kernel set in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.scale(self, other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


class Parameter(Tensor):
    """Named model parameter; the name encodes module provenance"""

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> Tensor:
        return self

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={list(self.shape)}, trainable={self.trainable})"


def make_result(tag: str, data: np.ndarray, inputs: Tuple[Tensor, ...], backward: BackwardRule) -> Tensor:
    """Wrap a forward value and register its backward rule when any input is tracked"""
    out = Tensor._wrap(data)
    if not _grad_enabled():
        return out
    tracked = [t for t in inputs if t.tracked]
    if not tracked:
        return out
    graphs = {id(t.graph): t.graph for t in tracked if t.graph is not None}
    if len(graphs) > 1:
        raise GraphError(f"{tag}: inputs belong to different graphs")
    graph = next(iter(graphs.values())) if graphs else _active()
    out.node = graph.record(tag, inputs, backward)
    out.graph = graph
    return out


def _accumulate(store: Dict[int, np.ndarray], key: int, value: np.ndarray):
    existing = store.get(key)
    store[key] = value if existing is None else existing + value


def _run_backward(output: Tensor, seed: np.ndarray, stop: int = 0):
    node_grads: Dict[int, np.ndarray] = {output.node: seed}
    leaf_grads: Dict[int, np.ndarray] = {}
    leaves: Dict[int, Tensor] = {}
    kept: Dict[int, np.ndarray] = {}
    nodes = output.graph.nodes
    for index in range(output.node, stop - 1, -1):
        upstream = node_grads.pop(index, None)
        if upstream is None:
            continue
        kept[index] = upstream
        node = nodes[index]
        for tensor, grad in zip(node.inputs, node.backward(upstream)):
            if grad is None or not tensor.tracked:
                continue
            if tensor.node is not None:
                _accumulate(node_grads, tensor.node, grad)
            else:
                leaves[id(tensor)] = tensor
                _accumulate(leaf_grads, id(tensor), grad)
    return kept, leaf_grads, leaves


def gradients(output: Tensor, wrt: Iterable[Tensor], seed: Optional[np.ndarray] = None) -> List[np.ndarray]:
    """Gradients of output (weighted by seed) with respect to any tensors, graph left intact"""
    wrt = list(wrt)
    if seed is None:
        if output.size != 1:
            raise GraphError(f"gradients: output of shape {list(output.shape)} needs an explicit seed")
        seed = np.ones_like(output.data)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != output.shape:
        raise ShapeError("gradients", output.shape, seed.shape)
    if output.node is None:
        return [seed.copy() if t is output else np.zeros_like(t.data) for t in wrt]
    if output.graph.consumed:
        raise GraphError("backward called on a consumed graph")

    wanted = [t.node for t in wrt if t.node is not None and t.graph is output.graph]
    stop = 0 if any(t.node is None for t in wrt) or not wanted else min(wanted)
    kept, leaf_grads, _ = _run_backward(output, seed, stop)

    result = []
    for tensor in wrt:
        if tensor.node is not None and tensor.graph is output.graph:
            grad = kept.get(tensor.node)
        else:
            grad = leaf_grads.get(id(tensor))
        result.append(np.zeros_like(tensor.data) if grad is None else np.array(grad, dtype=np.float64))
    return result


def backward(loss: Tensor, parameters: Optional[Iterable[Tensor]] = None):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's grad, then consume the graph"""
    if loss.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {list(loss.shape)}")
    for tensor in parameters or ():
        if tensor.grad is None:
            tensor.zero_grad()
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones_like(loss.data)
        return
    if loss.graph.consumed:
        raise GraphError("backward called twice on a consumed graph")

    _, leaf_grads, leaves = _run_backward(loss, np.ones_like(loss.data))
    for key, grad in leaf_grads.items():
        leaf = leaves[key]
        if not leaf.requires_grad:
            continue
        leaf.grad = grad.copy() if leaf.grad is None else leaf.grad + grad
    logger.debug(f"backward through {len(loss.graph)} nodes reached {len(leaf_grads)} leaves")
    loss.graph.release()

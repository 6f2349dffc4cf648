"""Dense tensor with reverse-mode differentiation."""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import GraphStateError, NumericError, PreconditionError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float64

# A backward function maps the output gradient to one gradient per parent
# (None for parents that do not need one).
GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Dense numeric array that records the operations applied to it.

    Leaves created with ``requires_grad=True`` own a zero-initialised ``grad``
    of identical shape; gradients from ``backward`` accumulate into it.
    Operator results keep references to their parents until ``backward``
    releases the graph.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_op", "_released")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        _parents: Tuple["Tensor", ...] = (),
        _grad_fn: Optional[GradFn] = None,
        _op: str = "",
    ):
        array = np.asarray(data, dtype=dtype or _infer_dtype(data))
        if array.ndim == 0:
            array = array.reshape(())
        if any(extent < 1 for extent in array.shape):
            raise PreconditionError(f"tensor extents must be >= 1, got shape {array.shape}")
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        if requires_grad and not _parents:
            self.grad = np.zeros_like(array)
        self._parents = _parents
        self._grad_fn = _grad_fn
        self._op = _op
        self._released = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        # Released results behave as leaves if another graph reaches them.
        return not self._parents and self._grad_fn is None

    def numpy(self) -> np.ndarray:
        """Return a copy of the underlying array."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise PreconditionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # Arithmetic sugar; the implementations live in ``ops``.
    def __add__(self, other):
        from . import ops

        return ops.add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        from . import ops

        return ops.sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        from . import ops

        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        if not np.isscalar(other):
            raise PreconditionError("tensor division is only defined by scalars")
        return ops.scale(self, 1.0 / float(other))

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        backward(self, grad)


def _infer_dtype(data):
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data.dtype
    return DEFAULT_DTYPE


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def custom_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    grad_fn: GradFn,
    name: str = "custom",
) -> Tensor:
    """Wrap a forward result and its backward rule as a graph node.

    Every built-in operator is expressed through this function; it is public
    so callers can add operators of their own.
    """
    parents = tuple(parents)
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(data, dtype=data.dtype)
    return Tensor(data, requires_grad=True, dtype=data.dtype, _parents=parents, _grad_fn=grad_fn, _op=name)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Propagate gradients from ``loss`` to every tracked leaf.

    The graph is released afterwards; a second call on the same result raises
    ``GraphStateError`` until the forward pass is recomputed.
    """
    if loss._released:
        raise GraphStateError("graph already released by a previous backward; recompute the forward pass")
    if not loss.requires_grad:
        raise PreconditionError("loss does not depend on any tracked tensor")
    if grad is None:
        if loss.data.size != 1:
            raise PreconditionError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if np.isnan(grad).any():
        raise NumericError("NaN in seed gradient")

    order = _topological_order(loss)
    pending: Dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(order):
        node_grad = pending.pop(id(node), None)
        if node_grad is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += node_grad
            continue
        parent_grads = node._grad_fn(node_grad)
        for parent, parent_grad in zip(node._parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + parent_grad
            else:
                pending[key] = parent_grad

    for node in order:
        if not node.is_leaf:
            node._parents = ()
            node._grad_fn = None
            node._released = True
    logger.debug("backward released %d graph nodes", len(order))

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from pyavrobust.exceptions import ShapeError

GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class TensorNode:
    """
    Dense float64 array taking part in a reverse-mode differentiable graph.

    Attributes
    -----------
    values: np.ndarray
        Forward value, always float64.
    grad: np.ndarray or None
        Gradient of the last ``backward`` root with respect to this node.
    kind: str
        Primitive that produced the node, ``"leaf"`` or ``"constant"``.
    parents: tuple
        Input nodes of the primitive (the op-record used for traversal).
    requires_grad: bool
        True for variables and for every node that depends on one.
    """

    __slots__ = ("values", "grad", "kind", "parents", "requires_grad", "_grad_fn")

    def __init__(
        self,
        values: np.ndarray | float,
        kind: str = "leaf",
        parents: Tuple["TensorNode", ...] = (),
        grad_fn: GradFn | None = None,
        requires_grad: bool = False,
    ) -> None:
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.kind = kind
        self.parents = parents
        self.requires_grad = requires_grad
        self._grad_fn = grad_fn

    @classmethod
    def variable(cls, values: np.ndarray | float) -> "TensorNode":
        """Leaf that receives a gradient on ``backward``."""
        return cls(np.array(values, dtype=np.float64), requires_grad=True)

    @classmethod
    def constant(cls, values: np.ndarray | float) -> "TensorNode":
        """Leaf treated as a fixed input."""
        return cls(values, kind="constant")

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item: node of shape {self.shape} is not a scalar")
        return float(self.values.reshape(()))

    def __add__(self, other: "TensorNode | float") -> "TensorNode":
        from pyavrobust.tensorcore.primitives import add

        return add(self, as_node(other))

    __radd__ = __add__

    def __sub__(self, other: "TensorNode | float") -> "TensorNode":
        from pyavrobust.tensorcore.primitives import sub

        return sub(self, as_node(other))

    def __rsub__(self, other: "TensorNode | float") -> "TensorNode":
        from pyavrobust.tensorcore.primitives import sub

        return sub(as_node(other), self)

    def __mul__(self, other: "TensorNode | float") -> "TensorNode":
        from pyavrobust.tensorcore.primitives import mul

        return mul(self, as_node(other))

    __rmul__ = __mul__

    def __neg__(self) -> "TensorNode":
        return self * -1.0

    def __repr__(self) -> str:
        return f"TensorNode(kind={self.kind!r}, shape={self.shape})"


def as_node(value: "TensorNode | np.ndarray | float") -> TensorNode:
    if isinstance(value, TensorNode):
        return value
    return TensorNode.constant(value)


def record(
    kind: str,
    values: np.ndarray,
    parents: Tuple[TensorNode, ...],
    grad_fn: GradFn,
) -> TensorNode:
    """Create the output node of a primitive and attach its op-record."""
    requires_grad = any(parent.requires_grad for parent in parents)
    return TensorNode(
        values,
        kind=kind,
        parents=parents,
        grad_fn=grad_fn if requires_grad else None,
        requires_grad=requires_grad,
    )


def _topological_order(root: TensorNode) -> List[TensorNode]:
    # iterative post-order DFS; parents precede children
    order: List[TensorNode] = []
    visited = set()
    stack: List[Tuple[TensorNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: TensorNode) -> Dict[TensorNode, np.ndarray]:
    """
    Reverse-mode sweep from a scalar root.

    Every node on a path to the root that requires a gradient has its ``grad``
    slot overwritten. Accumulation follows a fixed topological order, so two
    sweeps over identically built graphs are bit-identical.

    Parameters
    ----------
    root: TensorNode
        Scalar node (any shape with a single element).

    Returns
    -------
    grads: Dict[TensorNode, np.ndarray]
        Gradient of every reachable variable leaf, same shape as the leaf.

    Raises
    -------
    ShapeError:
        The root is not a scalar.
    """
    if root.values.size != 1:
        raise ShapeError(f"backward: root must be a scalar, got shape {root.shape}")

    leaves: Dict[TensorNode, np.ndarray] = {}
    if not root.requires_grad:
        return leaves

    pending: Dict[int, np.ndarray] = {id(root): np.ones_like(root.values)}
    for node in reversed(_topological_order(root)):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        node.grad = grad
        if node._grad_fn is None:
            leaves[node] = grad
            continue
        for parent, parent_grad in zip(node.parents, node._grad_fn(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + parent_grad
            else:
                pending[key] = parent_grad
    return leaves

"""
Reverse-mode differentiation over recorded Tensor operations
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.errors import ContractError
from core.tensor import Tensor

logger = logging.getLogger(__name__)


class Graph:
    """
    The recorded computation reachable from a root tensor

    Nodes are kept in recording order, which is a topological order because a
    primitive is always created after its operands.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes = self._collect(root)

    @staticmethod
    def _collect(root: Tensor) -> List[Tensor]:
        seen = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen[id(node)] = node
            stack.extend(node._parents)
        return sorted(seen.values(), key=lambda node: node._index)

    @property
    def leaves(self) -> List[Tensor]:
        return [node for node in self.nodes if node.is_leaf]

    def __len__(self):
        return len(self.nodes)


def backward(root: Tensor, graph: Optional[Graph] = None) -> Dict[Tensor, np.ndarray]:
    """
    Propagate d(root)/d(node) from a scalar root back to every leaf

    Args:
        root: scalar-valued tensor
        graph: a Graph of root, built on demand when omitted

    Returns:
        Mapping of each differentiable leaf (parameters and inputs) to its
        gradient array. Fan-out adds adjoints.
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")

    graph = graph or Graph(root)
    gradients: Dict[Tensor, np.ndarray] = {}
    if not root.requires_grad:
        return gradients

    adjoints: Dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
    for node in reversed(graph.nodes):
        adjoint = adjoints.pop(id(node), None)
        if adjoint is None:
            continue
        if node.is_leaf:
            gradients[node] = adjoint
            continue
        parent_grads = node._backward(adjoint)
        for parent, grad in zip(node._parents, parent_grads):
            if grad is None or not parent.requires_grad:
                continue
            if id(parent) in adjoints:
                adjoints[id(parent)] = adjoints[id(parent)] + grad
            else:
                adjoints[id(parent)] = np.asarray(grad, dtype=np.float64)

    return gradients


def grad(root: Tensor, wrt: Sequence[Tensor]) -> List[np.ndarray]:
    """Gradients of root with respect to each tensor in wrt (zeros when unreachable)"""
    gradients = backward(root)
    return [gradients.get(t, np.zeros(t.shape)) for t in wrt]

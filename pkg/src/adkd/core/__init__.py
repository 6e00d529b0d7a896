"""Minimal dense-tensor core with reverse-mode differentiation."""

from . import ops
from .optim import sgd_step
from .tensor import (
    ContractError,
    DimensionError,
    Graph,
    Node,
    Precision,
    Tensor,
    active_graph,
    backward,
    no_grad,
)

__all__ = [
    "ContractError",
    "DimensionError",
    "Graph",
    "Node",
    "Precision",
    "Tensor",
    "active_graph",
    "backward",
    "no_grad",
    "ops",
    "sgd_step",
]

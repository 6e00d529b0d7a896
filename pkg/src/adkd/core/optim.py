"""Plain stochastic gradient descent."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import DimensionError, Tensor


def sgd_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], lr: float) -> None:
    """Apply ``p <- p - lr * g`` in place. No momentum, no weight decay."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"sgd_step: gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if lr:
            p.data -= p.data.dtype.type(lr) * g.astype(p.dtype, copy=False)

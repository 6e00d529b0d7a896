from __future__ import annotations

from typing import Sequence

import numpy as np

from ..core import Precision, Tensor, no_grad, ops
from ..errors import ConfigError, DimensionError


def preprocess(image: np.ndarray, size: int, mean: Sequence[float], std: Sequence[float],
               precision: Precision | str = Precision.SINGLE) -> Tensor:
    """Bilinear resize of a ``3 x H x W`` [0, 1] image to ``size x size``, then ``(x - mean) / std``.

    The resize uses the same kernel as :func:`adkd.core.ops.bilinear_resize`.
    """
    if size <= 0 or size % 16:
        raise DimensionError(f"preprocess size {size} must be a positive multiple of 16")
    std_arr = np.asarray(std, dtype=np.float64)
    if np.any(std_arr == 0):
        raise ConfigError("normalisation std must be non-zero")
    dtype = Precision.of(precision).dtype
    x = Tensor(np.asarray(image, dtype=dtype))
    if x.shape[-2:] != (size, size):
        with no_grad():
            x = ops.bilinear_resize(x, size, size)
    m = np.asarray(mean, dtype=dtype).reshape(-1, 1, 1)
    s = std_arr.astype(dtype).reshape(-1, 1, 1)
    return Tensor(((x.data - m) / s).astype(dtype, copy=False))


def preprocess_batch(images: Sequence[np.ndarray], size: int, mean, std,
                     precision: Precision | str = Precision.SINGLE) -> np.ndarray:
    return np.stack([preprocess(img, size, mean, std, precision).data for img in images])

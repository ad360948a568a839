"""Restoration losses."""

from __future__ import annotations

import numpy as np

from ..autograd import Tensor
from ..autograd.tensor import make_result
from ..errors import ShapeError

CHARBONNIER_EPS = 1e-3


def charbonnier(pred: Tensor, target: Tensor, eps: float = CHARBONNIER_EPS) -> Tensor:
    """Mean over pixels of ``sqrt(d**2 + eps**2)``, ``d = pred - target``.

    Evaluated as ``eps + mean(d**2 / (sqrt(d**2 + eps**2) + eps))`` so a zero
    residual gives exactly ``eps``. Gradients flow to both arguments and are 0
    at zero residual.

    Raises:
        ShapeError: If the shapes differ
    """
    if pred.shape != target.shape:
        raise ShapeError(f"charbonnier: prediction {pred.shape} vs target {target.shape}")
    d = pred.data - target.data
    sq = d * d
    root = np.sqrt(sq + eps * eps)
    n = d.size
    value = np.asarray(eps + np.mean(sq / (root + eps)), dtype=pred.dtype)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gd = (g * d / root / n).astype(pred.dtype, copy=False)
        return gd, -gd

    return make_result(value, (pred, target), backward, "charbonnier")

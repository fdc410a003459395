"""Losses built from tensor primitives."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if (labels < 0).any() or (labels >= c).any():
        raise ValueError(f"labels must lie in [0, {c}), got {labels.tolist()}")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    return -(logits.log_softmax(-1) * onehot).sum() * (1.0 / n)

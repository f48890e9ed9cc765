"""Training loss: per-sample squared L2 distance averaged over the batch."""

from __future__ import annotations

import numpy as np


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Return (loss, grad wrt pred).

    loss = (1/B) * sum over samples of ||pred_b - target_b||_2^2, where B is
    the batch size (first axis). grad = 2 * (pred - target) / B.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    if pred.shape[0] < 1:
        raise ValueError("batch size must be >= 1")
    b = pred.shape[0]
    diff = pred - target
    value = float(np.sum(diff * diff)) / b
    grad = diff * (2.0 / b)
    return value, grad

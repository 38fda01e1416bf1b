"""Value-level loss primitives (no tape)."""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import DimensionError, ParameterError


def check_huber_args(pred, target, delta: float) -> None:
    if delta <= 0:
        raise ParameterError(f"huber delta must be > 0, got {delta}")
    if np.shape(pred) != np.shape(target):
        raise DimensionError(
            f"huber shapes differ: {np.shape(pred)} vs {np.shape(target)}"
        )


def huber(pred, target, delta: float) -> float:
    """Mean over elements of the Huber penalty with threshold delta."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    check_huber_args(pred, target, delta)
    loss, _ = kernels.huber_loss(pred, target, delta)
    return loss


def mean_sq_diff(pred, target) -> float:
    """Mean over elements of the squared difference."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(
            f"mean_sq_diff shapes differ: {pred.shape} vs {target.shape}"
        )
    loss, _ = kernels.msd_loss(pred, target)
    return loss

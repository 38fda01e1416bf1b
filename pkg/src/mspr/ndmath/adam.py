"""Bias-corrected Adam over ParamSets (functional: returns new snapshots)."""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import ContractError, DimensionError
from .tensor import AdamState, ParamSet, Tensor


def adam_step(
    params: ParamSet,
    grads: dict,
    state: AdamState,
    lr: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ParamSet, AdamState]:
    """One update. `grads` maps tensor name -> Tensor or ndarray."""
    t = state.step + 1
    new_tensors: dict[str, Tensor] = {}
    new_m: dict[str, Tensor] = {}
    new_v: dict[str, Tensor] = {}
    for name, tensor in params.items():
        if name not in grads:
            raise ContractError(
                f"missing gradient for parameter {params.name}/{name}"
            )
        g = grads[name]
        g = g.array if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != tensor.array.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape "
                f"{tensor.array.shape} for {params.name}/{name}"
            )
        p2, m2, v2 = kernels.adam_fused(
            tensor.array,
            np.ascontiguousarray(g),
            state.m[name].array,
            state.v[name].array,
            t,
            lr,
            beta1,
            beta2,
            eps,
        )
        new_tensors[name] = Tensor(p2)  # validates: catches NaN blowups early
        new_m[name] = Tensor._wrap(m2)
        new_v[name] = Tensor._wrap(v2)
    return params.replaced(new_tensors), AdamState(new_m, new_v, t)

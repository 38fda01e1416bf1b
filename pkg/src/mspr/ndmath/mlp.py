"""Multilayer perceptrons over ParamSets.

A ParamSet describes L >= 1 affine layers as tensors w0, b0, w1, b1, ...
with the activation applied between layers and never after the last.
`mlp_forward` has a fast value-only path and a taped path for gradients.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import DimensionError, ParameterError
from . import autodiff as ad
from .tensor import ParamSet, Tensor

ACTIVATIONS = ("relu", "tanh")


def mlp_init(rng: np.random.Generator, sizes: list[int], name: str) -> ParamSet:
    """Affine stack with per-layer U(-1/sqrt(fan_in), +1/sqrt(fan_in)) init."""
    if len(sizes) < 2:
        raise ParameterError("mlp_init needs at least [in, out] sizes")
    items = []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=(fan_out,))
        items.append((f"w{i}", Tensor(w)))
        items.append((f"b{i}", Tensor(b)))
    return ParamSet(name, items)


def mlp_layer_count(params: ParamSet) -> int:
    n = len(params)
    if n < 2 or n % 2 != 0:
        raise DimensionError(
            f"ParamSet {params.name!r} is not an MLP (got {n} tensors)"
        )
    return n // 2


def _check_activation(activation: str) -> None:
    if activation not in ACTIVATIONS:
        raise ParameterError(
            f"unknown activation {activation!r}; expected one of {ACTIVATIONS}"
        )


def _check_layer_input(params: ParamSet, i: int, width: int, w: np.ndarray) -> None:
    if width != w.shape[0]:
        raise DimensionError(
            f"ParamSet {params.name!r} layer {i}: input width {width} "
            f"!= weight rows {w.shape[0]}"
        )


def mlp_forward(
    params: ParamSet,
    x,
    activation: str = "relu",
    tape: ad.Tape | None = None,
    trainable: bool = True,
):
    """Run the MLP on a (batch, in) array or Var.

    Without a tape returns an ndarray. With a tape returns a Var; params are
    recorded as differentiable leaves unless trainable=False (gradients then
    still flow through to the input).
    """
    _check_activation(activation)
    layers = mlp_layer_count(params)

    if tape is None and not isinstance(x, ad.Var):
        y = np.asarray(x, dtype=np.float64)
        if y.ndim != 2:
            raise DimensionError(f"mlp_forward input must be 2-d, got {y.shape}")
        for i in range(layers):
            w = params[f"w{i}"].array
            b = params[f"b{i}"].array
            _check_layer_input(params, i, y.shape[1], w)
            y = y @ w
            y += b
            if i < layers - 1:
                y = kernels.relu_fwd(y) if activation == "relu" else np.tanh(y)
        return y

    if tape is None:
        tape = x.tape
    if not isinstance(x, ad.Var):
        x = ad.Var(np.asarray(x, dtype=np.float64), tape)
    leaves = tape.watch(params) if trainable else None
    y = x
    for i in range(layers):
        wt = params[f"w{i}"]
        bt = params[f"b{i}"]
        _check_layer_input(params, i, y.array.shape[1], wt.array)
        w = leaves[f"w{i}"] if trainable else wt.array
        b = leaves[f"b{i}"] if trainable else bt.array
        y = ad.add_row(ad.matmul(y, w), b)
        if i < layers - 1:
            y = ad.relu(y) if activation == "relu" else ad.tanh(y)
    return y

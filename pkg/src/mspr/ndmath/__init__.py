"""Minimal dense tensor math: tensors, reverse-mode autodiff, MLPs, Adam."""

from . import autodiff
from .adam import adam_step
from .autodiff import Tape, Var, backward
from .checkpoint import load_tensors, save_tensors
from .losses import huber, mean_sq_diff
from .mlp import ACTIVATIONS, mlp_forward, mlp_init, mlp_layer_count
from .tensor import AdamState, ParamSet, Tensor, hard_copy

__all__ = [
    "ACTIVATIONS",
    "AdamState",
    "ParamSet",
    "Tape",
    "Tensor",
    "Var",
    "adam_step",
    "autodiff",
    "backward",
    "hard_copy",
    "huber",
    "load_tensors",
    "mean_sq_diff",
    "mlp_forward",
    "mlp_init",
    "mlp_layer_count",
    "save_tensors",
]

"""Reverse-mode automatic differentiation over numpy arrays.

A Tape records operation nodes as they execute; `backward` walks them once
in reverse creation order (which is reverse topological order, since every
node is appended after its inputs exist). Leaves are named parameters;
anything passed as a plain ndarray is a constant and receives no gradient.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import ContractError, DimensionError
from .losses import check_huber_args
from .tensor import ParamSet, Tensor


class Var:
    """A value on (or feeding) a tape."""

    __slots__ = ("array", "tape", "grad", "leaf_name")

    def __init__(self, array: np.ndarray, tape: "Tape", leaf_name: str | None = None):
        self.array = array
        self.tape = tape
        self.grad = None
        self.leaf_name = leaf_name


class _Node:
    __slots__ = ("out", "parents", "bwd")

    def __init__(self, out: Var, parents: tuple[Var, ...], bwd):
        self.out = out
        self.parents = parents
        self.bwd = bwd


class Tape:
    """Recorded computation nodes plus the named leaves they read."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: dict[str, Var] = {}

    # -- construction -----------------------------------------------------

    def leaf(self, name: str, array: np.ndarray) -> Var:
        if name in self._leaves:
            return self._leaves[name]
        v = Var(array, self, leaf_name=name)
        self._leaves[name] = v
        return v

    def watch(self, params: ParamSet) -> dict[str, Var]:
        """Leaves for every tensor of a ParamSet, keyed 'set_name/tensor'."""
        return {
            n: self.leaf(f"{params.name}/{n}", t.array) for n, t in params.items()
        }

    def _emit(self, out_array: np.ndarray, parents: tuple[Var, ...], bwd) -> Var:
        out = Var(out_array, self)
        self.nodes.append(_Node(out, parents, bwd))
        return out

    # -- backward ---------------------------------------------------------

    def gradients(self, loss: Var) -> dict[str, np.ndarray]:
        """d(loss)/d(leaf) for every registered leaf (zeros if off-path)."""
        if loss.tape is not self:
            raise ContractError("loss was not produced under this tape")
        if loss.array.size != 1:
            raise ContractError(
                f"loss must be scalar, got shape {loss.array.shape}"
            )
        loss.grad = np.ones_like(loss.array)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.bwd(g)):
                if parent is None or pg is None:
                    continue
                if parent.grad is None:
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg
        out = {}
        for name, leaf in self._leaves.items():
            if leaf.grad is None:
                out[name] = np.zeros_like(leaf.array)
            else:
                out[name] = leaf.grad
        return out


def backward(tape: Tape, loss: Var) -> dict[str, Tensor]:
    """Gradient map (leaf name -> Tensor); validates grads are finite."""
    return {n: Tensor(g) for n, g in tape.gradients(loss).items()}


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def _arr(x):
    return x.array if isinstance(x, Var) else x


def matmul(x, w) -> Var:
    xa, wa = _arr(x), _arr(w)
    if xa.shape[-1] != wa.shape[0]:
        raise DimensionError(
            f"matmul: inner dims differ ({xa.shape} @ {wa.shape})"
        )
    tape = x.tape if isinstance(x, Var) else w.tape
    out = xa @ wa

    def bwd(g):
        gx = g @ wa.T if isinstance(x, Var) else None
        gw = xa.T @ g if isinstance(w, Var) else None
        return (gx, gw)

    return tape._emit(
        out,
        (x if isinstance(x, Var) else None, w if isinstance(w, Var) else None),
        bwd,
    )


def add_row(x: Var, b) -> Var:
    """Add a bias row-vector to every row of x."""
    ba = _arr(b)
    out = x.array + ba

    def bwd(g):
        gb = g.sum(axis=0) if isinstance(b, Var) else None
        return (g, gb)

    return x.tape._emit(out, (x, b if isinstance(b, Var) else None), bwd)


def add(x: Var, y) -> Var:
    out = x.array + _arr(y)

    def bwd(g):
        return (g, g if isinstance(y, Var) else None)

    return x.tape._emit(out, (x, y if isinstance(y, Var) else None), bwd)


def scale(x: Var, c: float) -> Var:
    out = x.array * c

    def bwd(g):
        return (g * c,)

    return x.tape._emit(out, (x,), bwd)


def relu(x: Var) -> Var:
    xa = x.array
    out = kernels.relu_fwd(xa)

    def bwd(g):
        return (kernels.relu_bwd(g, xa),)

    return x.tape._emit(out, (x,), bwd)


def tanh(x: Var) -> Var:
    out = np.tanh(x.array)

    def bwd(g):
        return (kernels.tanh_bwd(g, out),)

    return x.tape._emit(out, (x,), bwd)


def concat_cols(parts: list) -> Var:
    arrays = [_arr(p) for p in parts]
    tape = next(p.tape for p in parts if isinstance(p, Var))
    out = np.concatenate(arrays, axis=1)
    widths = [a.shape[1] for a in arrays]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        return tuple(
            g[:, offsets[i]: offsets[i + 1]] if isinstance(parts[i], Var) else None
            for i in range(len(parts))
        )

    return tape._emit(
        out, tuple(p if isinstance(p, Var) else None for p in parts), bwd
    )


def mean_all(x: Var) -> Var:
    n = x.array.size
    out = np.asarray(x.array.sum() / n)

    def bwd(g):
        return (np.full_like(x.array, float(g) / n),)

    return x.tape._emit(out, (x,), bwd)


def msd(pred: Var, target) -> Var:
    """Mean squared difference over all elements (fused value+grad)."""
    ta = _arr(target)
    if pred.array.shape != ta.shape:
        raise DimensionError(
            f"msd shapes differ: {pred.array.shape} vs {ta.shape}"
        )
    loss, grad = kernels.msd_loss(pred.array, ta)
    out = np.asarray(loss)

    def bwd(g):
        return (float(g) * grad,)

    return pred.tape._emit(out, (pred,), bwd)


def huber(pred: Var, target, delta: float) -> Var:
    """Mean Huber loss over all elements (fused value+grad)."""
    ta = _arr(target)
    check_huber_args(pred.array, ta, delta)
    loss, grad = kernels.huber_loss(pred.array, ta, delta)
    out = np.asarray(loss)

    def bwd(g):
        return (float(g) * grad,)

    return pred.tape._emit(out, (pred,), bwd)

"""Dense float64 tensors and named parameter sets.

Tensors are immutable snapshots: the backing numpy array is C-contiguous,
float64 and marked read-only, so params can be shared freely between
contexts. Updates always build new tensors.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DimensionError, NumericError


class Tensor:
    """A finite float64 array with an immutable payload."""

    __slots__ = ("array",)

    def __init__(self, array):
        arr = np.ascontiguousarray(array, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor payload contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "array", arr)

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        """Internal fast path: trusts the caller that entries are finite."""
        obj = object.__new__(cls)
        array.setflags(write=False)
        object.__setattr__(obj, "array", array)
        return obj

    @property
    def shape(self) -> list[int]:
        return list(self.array.shape)

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the payload."""
        return self.array.reshape(-1)

    def copy(self) -> "Tensor":
        return Tensor(self.array.copy())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tensor)
            and self.array.shape == other.array.shape
            and bool(np.array_equal(self.array, other.array))
        )

    def __hash__(self):  # identity hash; payload equality via ==
        return id(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={tuple(self.array.shape)})"


class ParamSet:
    """Ordered, uniquely named tensors for one network.

    The set is immutable after construction; `replaced` builds an updated
    copy with the same names and shapes.
    """

    __slots__ = ("name", "_names", "_tensors")

    def __init__(self, name: str, items: list[tuple[str, Tensor]]):
        names = [n for n, _ in items]
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate tensor names in ParamSet {name!r}")
        self.name = name
        self._names = tuple(names)
        self._tensors = {n: t for n, t in items}

    def names(self) -> tuple[str, ...]:
        return self._names

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._names)

    def items(self):
        for n in self._names:
            yield n, self._tensors[n]

    def replaced(self, new_tensors: dict[str, Tensor]) -> "ParamSet":
        """Copy with some tensors swapped; names and shapes must match."""
        items = []
        for n in self._names:
            t = new_tensors.get(n, self._tensors[n])
            if t.array.shape != self._tensors[n].array.shape:
                raise DimensionError(
                    f"ParamSet {self.name!r}: tensor {n!r} shape changed "
                    f"{self._tensors[n].array.shape} -> {t.array.shape}"
                )
            items.append((n, t))
        return ParamSet(self.name, items)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ParamSet)
            and self.name == other.name
            and self._names == other._names
            and all(self._tensors[n] == other._tensors[n] for n in self._names)
        )

    def __hash__(self):
        return id(self)


class AdamState:
    """First/second moment tensors mirroring one ParamSet, plus step count."""

    __slots__ = ("m", "v", "step")

    def __init__(self, m: dict[str, Tensor], v: dict[str, Tensor], step: int = 0):
        if step < 0:
            raise ContractError("Adam step counter must be non-negative")
        self.m = m
        self.v = v
        self.step = step

    @classmethod
    def init(cls, params: ParamSet) -> "AdamState":
        zeros = {n: Tensor(np.zeros_like(t.array)) for n, t in params.items()}
        zeros_v = {n: Tensor(np.zeros_like(t.array)) for n, t in params.items()}
        return cls(zeros, zeros_v, 0)


def hard_copy(src: ParamSet) -> ParamSet:
    """Value-independent duplicate: later updates to src never leak in."""
    return ParamSet(src.name, [(n, t.copy()) for n, t in src.items()])

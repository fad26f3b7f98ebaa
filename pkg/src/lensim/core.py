"""Token-level representation types, pooling, and layer selection."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class Pooling(enum.Enum):
    MEAN = "mean"
    LAST_TOKEN = "last_token"


def _check_finite(values: np.ndarray) -> None:
    # A finite total rules out nan/inf entries (overflow only costs the slow path).
    if np.isfinite(np.add.reduce(values, axis=None)):
        return
    bad = ~np.isfinite(values)
    if not bad.any():
        return
    idx = np.argwhere(bad)[0]
    if values.ndim == 1:
        raise ValueError(f"non-finite value at column {idx[0]}")
    raise ValueError(f"non-finite value at row {idx[0]}, column {idx[1]}")


@dataclass(frozen=True)
class TokenMatrix:
    """Hidden states of one sequence at one layer: ``T`` rows by ``d`` columns.

    Values are stored as a read-only float64 array regardless of input dtype.
    ``tokens`` is either empty or holds one surface form per row.
    """

    values: np.ndarray
    tokens: tuple[str, ...] = ()
    layer_index: int = 0

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-d matrix, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"matrix must have T >= 1 and d >= 1, got {arr.shape}")
        _check_finite(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        tokens = tuple(self.tokens)
        if tokens and len(tokens) != arr.shape[0]:
            raise ValueError(f"{len(tokens)} tokens for {arr.shape[0]} rows")
        object.__setattr__(self, "tokens", tokens)
        if self.layer_index < 0:
            raise ValueError("layer_index must be >= 0")

    @classmethod
    def _trusted(cls, values: np.ndarray, tokens: tuple[str, ...] = (), layer_index: int = 0) -> "TokenMatrix":
        # Takes ownership of a finite float64 array without copying or re-checking.
        values.flags.writeable = False
        obj = object.__new__(cls)
        object.__setattr__(obj, "values", values)
        object.__setattr__(obj, "tokens", tokens)
        object.__setattr__(obj, "layer_index", layer_index)
        return obj

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def prefix(self, k: int) -> "TokenMatrix":
        """First ``k`` rows, sharing memory with this matrix."""
        if not 1 <= k <= self.length:
            raise IndexError(f"prefix length {k} out of range for T={self.length}")
        return TokenMatrix._trusted(self.values[:k], self.tokens[:k], self.layer_index)

    def select_rows(self, rows: Sequence[int]) -> "TokenMatrix":
        rows = list(rows)
        if any(not -self.length <= i < self.length for i in rows):
            raise IndexError(f"row index out of range for T={self.length}")
        tokens = tuple(self.tokens[i] for i in rows) if self.tokens else ()
        return TokenMatrix._trusted(self.values[rows], tokens, self.layer_index)


@dataclass(frozen=True)
class PooledVector:
    values: np.ndarray
    source_length: int
    pooling: Pooling = Pooling.MEAN

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError(f"expected a non-empty vector, got shape {arr.shape}")
        _check_finite(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        if self.source_length < 1:
            raise ValueError("source_length must be >= 1")


@dataclass(frozen=True)
class LayerRange:
    """Inclusive range of layer indices."""

    lo: int
    hi: int
    n_layers: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi:
            raise ValueError(f"invalid layer range ({self.lo}, {self.hi})")
        if self.n_layers is not None and self.hi >= self.n_layers:
            raise ValueError(f"layer {self.hi} out of range for {self.n_layers} layers")

    def __iter__(self):
        return iter(range(self.lo, self.hi + 1))

    def __len__(self):
        return self.hi - self.lo + 1


def tree_sum_rows(values: np.ndarray) -> np.ndarray:
    """Sum the rows of a 2-d array by pairwise (tree) reduction."""
    acc = np.asarray(values, dtype=np.float64)
    while acc.shape[0] > 1:
        half = acc.shape[0] // 2
        paired = acc[:half] + acc[half:2 * half]
        if acc.shape[0] % 2:
            paired = np.concatenate([paired, acc[-1:]], axis=0)
        acc = paired
    return acc[0].copy()


def mean_pool(m: TokenMatrix) -> PooledVector:
    # TokenMatrix construction already rejects non-finite entries by row/column.
    return PooledVector(tree_sum_rows(m.values) / m.length, m.length, Pooling.MEAN)


def last_token_pool(m: TokenMatrix) -> PooledVector:
    return PooledVector(m.values[-1], m.length, Pooling.LAST_TOKEN)


def pool(m: TokenMatrix, pooling: Pooling = Pooling.MEAN) -> PooledVector:
    if pooling is Pooling.MEAN:
        return mean_pool(m)
    return last_token_pool(m)


def middle_layers(n_layers: int) -> LayerRange:
    """Layers ``floor(n/4)`` through ``floor(3n/4)``, inclusive, clamped to valid indices."""
    if n_layers < 4:
        raise ValueError(f"need at least 4 layers, got {n_layers}")
    lo = n_layers // 4
    hi = min(3 * n_layers // 4, n_layers - 1)
    return LayerRange(lo, hi, n_layers)

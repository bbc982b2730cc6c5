"""Dense tensors and the contraction primitives the rest of the package uses.

Tensors are real, 64-bit, row-major. ``contract`` works by permuting the
contracted axes to the inner positions, reshaping both operands to matrices
and calling a single matrix multiply.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, ValidationError


class DenseTensor:
    """Immutable n-dimensional real array with an explicit shape.

    ``data`` is the flat row-major buffer; ``array`` is a read-only view with
    the tensor's shape. A zero-dimensional tensor holds one scalar.
    """

    __slots__ = ("_array",)

    def __init__(self, values, shape: Sequence[int] | None = None):
        arr = np.array(values, dtype=np.float64, order="C", copy=True)
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            if any(s < 1 for s in shape):
                raise DimensionError(f"extents must be positive, got {shape}")
            if arr.size != int(np.prod(shape, dtype=np.int64)):
                raise DimensionError(
                    f"data length {arr.size} does not match shape {shape}"
                )
            arr = arr.reshape(shape)
        elif any(s < 1 for s in arr.shape):
            raise DimensionError(f"extents must be positive, got {arr.shape}")
        arr.setflags(write=False)
        self._array = arr

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def ndim(self) -> int:
        return self._array.ndim

    @property
    def data(self) -> np.ndarray:
        return self._array.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        return self._array

    def __getitem__(self, index):
        return self._array[index]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._array
        return self._array.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, DenseTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._array, other._array)

    def __hash__(self):
        return hash((self.shape, self._array.tobytes()))

    def __repr__(self):
        return f"DenseTensor(shape={self.shape})"


@dataclass(frozen=True)
class AxisPair:
    """Contract axis ``axis_a`` of the first tensor with ``axis_b`` of the second."""

    axis_a: int
    axis_b: int


def _as_array(t) -> np.ndarray:
    if isinstance(t, DenseTensor):
        return t.array
    return np.asarray(t, dtype=np.float64)


def _normalize_pairs(pairs: Iterable) -> list[AxisPair]:
    out = []
    for p in pairs:
        out.append(p if isinstance(p, AxisPair) else AxisPair(int(p[0]), int(p[1])))
    return out


def contract(a, b, pairs: Iterable = ()) -> DenseTensor:
    """Sum over the paired axes of ``a`` and ``b``.

    The result carries the free axes of ``a`` in order, followed by the free
    axes of ``b``. An empty ``pairs`` gives the outer product.
    """
    A = _as_array(a)
    B = _as_array(b)
    pairs = _normalize_pairs(pairs)
    seen_a, seen_b = set(), set()
    for p in pairs:
        if not (0 <= p.axis_a < A.ndim) or not (0 <= p.axis_b < B.ndim):
            raise DimensionError(f"axis pair {p} out of range for shapes {A.shape}, {B.shape}")
        if p.axis_a in seen_a or p.axis_b in seen_b:
            raise DimensionError(f"axis used twice in pair {p}")
        if A.shape[p.axis_a] != B.shape[p.axis_b]:
            raise DimensionError(
                f"extent mismatch on pair {p}: {A.shape[p.axis_a]} != {B.shape[p.axis_b]}"
            )
        seen_a.add(p.axis_a)
        seen_b.add(p.axis_b)

    ca = [p.axis_a for p in pairs]
    cb = [p.axis_b for p in pairs]
    free_a = [i for i in range(A.ndim) if i not in seen_a]
    free_b = [i for i in range(B.ndim) if i not in seen_b]
    inner = int(np.prod([A.shape[i] for i in ca], dtype=np.int64))
    rows = int(np.prod([A.shape[i] for i in free_a], dtype=np.int64))
    cols = int(np.prod([B.shape[i] for i in free_b], dtype=np.int64))

    Am = np.ascontiguousarray(A.transpose(free_a + ca)).reshape(rows, inner)
    Bm = np.ascontiguousarray(B.transpose(cb + free_b)).reshape(inner, cols)
    out_shape = [A.shape[i] for i in free_a] + [B.shape[i] for i in free_b]
    return DenseTensor((Am @ Bm).reshape(out_shape))


def trace_product(matrices: Sequence, closed: bool = True) -> float:
    """Evaluate a matrix chain.

    ``closed=True`` returns Tr(A_1 A_2 ... A_n). ``closed=False`` treats the
    first and last entries as row / column vectors and returns the bilinear
    form v_1 · A_2 ··· A_{n-1} · v_n.
    """
    mats = [_as_array(m) for m in matrices]
    if not mats:
        raise DimensionError("empty matrix chain")
    if closed:
        for m in mats:
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise DimensionError(f"closed chain needs square matrices, got {m.shape}")
        acc = mats[0]
        for i, m in enumerate(mats[1:], start=1):
            if acc.shape[1] != m.shape[0]:
                raise DimensionError(f"inner dimension mismatch at position {i}")
            acc = acc @ m
        return float(np.trace(acc))

    if len(mats) < 2:
        raise DimensionError("open chain needs at least two boundary vectors")
    left, right = mats[0], mats[-1]
    if left.ndim != 1 or right.ndim != 1:
        raise DimensionError("open chain boundaries must be vectors")
    acc = left
    for i, m in enumerate(mats[1:-1], start=1):
        if m.ndim != 2 or acc.shape[0] != m.shape[0]:
            raise DimensionError(f"inner dimension mismatch at position {i}")
        acc = acc @ m
    if acc.shape[0] != right.shape[0]:
        raise DimensionError(f"inner dimension mismatch at position {len(mats) - 1}")
    return float(acc @ right)


def copy_tensor(order: int, dim: int) -> DenseTensor:
    """The δ tensor: 1 where all ``order`` indices agree, 0 elsewhere."""
    if order < 1 or dim < 1:
        raise ValidationError(f"copy_tensor needs order >= 1 and dim >= 1, got {order}, {dim}")
    arr = np.zeros((dim,) * order)
    idx = np.arange(dim)
    arr[(idx,) * order] = 1.0
    return DenseTensor(arr)

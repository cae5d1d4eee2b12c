"""Dense float32 tensor primitives shared by every other module.

Tensors are plain numpy ``float32`` arrays in row-major layout; images are
channel-last ``(H, W, C)``. Operations return new arrays and never mutate
their inputs, so tensors are safe to share read-only across threads.
Reductions accumulate in float64 to keep sums stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Tensor = np.ndarray


class ShapeMismatchError(ValueError):
    """Operand shapes do not agree."""


class EmptyTensorError(ValueError):
    """Reduction over a tensor with no elements."""


class NonFiniteError(ValueError):
    """A tensor contains NaN or Inf."""


def tensor(data, shape=None) -> Tensor:
    """Build a validated float32 tensor from array-like data.

    Raises NonFiniteError if any value is NaN/Inf, ShapeMismatchError if an
    explicit shape does not match the element count.
    """
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if shape is not None:
        if int(np.prod(shape)) != arr.size:
            raise ShapeMismatchError(
                f"cannot view {arr.size} values as shape {tuple(shape)}"
            )
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class PixelDomain:
    """Legal pixel value range [lo, hi] for an image tensor."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"pixel domain requires lo < hi, got ({self.lo}, {self.hi})")


DOMAIN_255 = PixelDomain(0.0, 255.0)
DOMAIN_01 = PixelDomain(0.0, 1.0)


def elementwise_sign(t: Tensor) -> Tensor:
    """Strict sign of each element: -1, 0 or +1 (sign(0) = 0)."""
    return np.sign(np.asarray(t, dtype=np.float32))


def add_scaled(a: Tensor, b: Tensor, s: float) -> Tensor:
    """Return ``a + s * b`` elementwise, in float32."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    out = a + np.float32(s) * b
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("add_scaled overflowed to non-finite values")
    return out


def clamp(t: Tensor, d: PixelDomain) -> Tensor:
    """Clip every element into [d.lo, d.hi]."""
    return np.clip(t, np.float32(d.lo), np.float32(d.hi))


def region_assign(t: Tensor, rows: range, cols: range, value_source) -> Tensor:
    """Replace the rows x cols block (all channels) of a (H, W, C) tensor.

    ``value_source`` is a scalar or an array broadcastable to the block.
    Elements outside the block are preserved bit-identically.
    """
    if t.ndim != 3:
        raise ShapeMismatchError(f"region_assign expects rank-3 (H,W,C), got shape {t.shape}")
    h, w, _ = t.shape
    for r, extent, name in ((rows, h, "rows"), (cols, w, "cols")):
        if r.step != 1:
            raise ValueError(f"{name} range must have step 1")
        if len(r) > 0 and (r.start < 0 or r.stop > extent):
            raise IndexError(f"{name} range {r} out of bounds for extent {extent}")
    out = t.copy()
    if len(rows) == 0 or len(cols) == 0:
        return out
    out[rows.start : rows.stop, cols.start : cols.stop, :] = np.float32(value_source) if np.isscalar(
        value_source
    ) else np.asarray(value_source, dtype=np.float32)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("region_assign introduced non-finite values")
    return out


def reduce_mean(t: Tensor) -> float:
    if t.size == 0:
        raise EmptyTensorError("mean of empty tensor")
    return float(np.mean(t, dtype=np.float64))


def reduce_sum(t: Tensor) -> float:
    if t.size == 0:
        raise EmptyTensorError("sum of empty tensor")
    return float(np.sum(t, dtype=np.float64))


def arg_max(t: Tensor) -> int:
    """Index of the largest element; the lowest index wins ties."""
    if t.size == 0:
        raise EmptyTensorError("argmax of empty tensor")
    return int(np.argmax(t))

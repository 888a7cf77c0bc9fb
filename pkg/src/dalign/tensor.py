"""Dense double-precision array helpers.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Shapes are
``(batch, channels)`` for dense activations and ``(batch, channels, h, w)``
for spatial ones.  The functions here add the error contracts the rest of
the kit relies on; none of them mutate their inputs.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError, EmptyReductionError


def as_tensor(values, shape=None) -> np.ndarray:
    """Copy ``values`` into a fresh float64 array, optionally reshaped."""
    arr = np.array(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != arr.size:
            raise DimensionError(f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    return arr


def _zip_operands(a, b):
    a = np.asarray(a, dtype=np.float64)
    if np.isscalar(b) or np.ndim(b) == 0:
        return a, float(b)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _zip_operands(a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = _zip_operands(a, b)
    return a - b


def mul(a, b) -> np.ndarray:
    a, b = _zip_operands(a, b)
    return a * b


def scale(a, factor: float) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) * float(factor)


def sqrt(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0):
        raise DomainError("sqrt of a negative value")
    return np.sqrt(a)


def ln(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if np.any(~(a > 0)):
        raise DomainError("ln requires strictly positive inputs")
    return np.log(a)


def exp(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    with np.errstate(over="raise"):
        try:
            return np.exp(a)
        except FloatingPointError as exc:
            raise DomainError("exp overflow") from exc


def channel_view(t: np.ndarray) -> np.ndarray:
    """Return ``t`` as ``(batch, channels, positions)``; positions pools h*w."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 2:
        return t[:, :, None]
    if t.ndim == 4:
        n, c, h, w = t.shape
        return t.reshape(n, c, h * w)
    raise DimensionError(f"expected a 2-D or 4-D tensor, got {t.ndim}-D")


def reduce_channel(t, stat: str = "mean", subset: slice | None = None) -> np.ndarray:
    """Per-channel mean or biased variance over the batch and spatial axes.

    ``subset`` selects a contiguous range of batch rows.
    """
    view = channel_view(t)
    if subset is not None:
        start, stop, step = subset.indices(view.shape[0])
        if step != 1:
            raise DimensionError("subset must be a contiguous range")
        view = view[start:stop]
    count = view.shape[0] * view.shape[2]
    if count == 0:
        raise EmptyReductionError("reduction over an empty subset")
    mean = view.sum(axis=(0, 2)) / count
    if stat == "mean":
        return mean
    if stat == "var":
        dev = view - mean[None, :, None]
        return (dev * dev).sum(axis=(0, 2)) / count
    raise ValueError(f"unknown statistic {stat!r}")


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")
    return a @ b

"""Dense float64 tensors backed by numpy arrays.

Tensors are plain ``numpy.ndarray`` objects in row-major (C) order with a
channels-last layout (``[H, W, C]`` for an image, ``[N, H, W, C]`` for a
batch).  The helpers here add the shape checks the rest of the package relies
on: no broadcasting, explicit element-count validation, and seeded
initialization.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .exceptions import ShapeError

DTYPE = np.float64

_INDEX_MAX = np.iinfo(np.intp).max


def as_shape(dims: Sequence[int]) -> tuple[int, ...]:
    """Validate ``dims`` and return it as a tuple of ints."""
    try:
        shape = tuple(int(d) for d in dims)
    except TypeError:
        shape = (int(dims),)
    if not shape:
        raise ShapeError("shape must have at least one dimension")
    if any(d < 1 for d in shape):
        raise ShapeError(f"every dimension must be >= 1, got {shape}")
    if math.prod(shape) > _INDEX_MAX:
        raise ShapeError(f"shape {shape} overflows the index range")
    return shape


def tensor_filled(shape: Sequence[int], value: float) -> np.ndarray:
    return np.full(as_shape(shape), value, dtype=DTYPE)


def make_rng(seed: int | Sequence[int] | np.random.Generator) -> np.random.Generator:
    """Seeded PCG64 generator; the only source of randomness in the package."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def tensor_random_uniform(shape: Sequence[int], lo: float, hi: float,
                          rng: int | np.random.Generator) -> np.ndarray:
    """I.i.d. samples from ``[lo, hi)``; identical seeds give identical tensors."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
    out = make_rng(rng).uniform(lo, hi, size=as_shape(shape))
    # uniform() may round up to hi when hi - lo is tiny relative to lo
    return np.minimum(out, np.nextafter(hi, lo))


def reshape(t: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    shape = as_shape(new_shape)
    if math.prod(shape) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {shape}")
    return np.array(t, dtype=DTYPE, copy=True).reshape(shape)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def elementwise(t: np.ndarray, f: Callable[[float], float]) -> np.ndarray:
    """Apply a scalar map to every element.  ``f`` may also be a numpy ufunc."""
    if isinstance(f, np.ufunc):
        return f(t).astype(DTYPE)
    return np.fromiter((f(v) for v in t.ravel()), dtype=DTYPE, count=t.size).reshape(t.shape)


def _check_same(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ, {a.shape} vs {b.shape}")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same(a, b, "add")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same(a, b, "sub")
    return a - b


def scale(t: np.ndarray, factor: float) -> np.ndarray:
    return np.asarray(t, dtype=DTYPE) * factor


def flat_index(shape: Sequence[int], coords: Sequence[int]) -> int:
    """Row-major offset of ``coords`` inside ``shape`` (last dimension fastest)."""
    if len(coords) != len(shape):
        raise ShapeError(f"{len(coords)} coordinates for a {len(shape)}-d shape")
    idx = 0
    for c, d in zip(coords, shape):
        if not 0 <= c < d:
            raise IndexError(f"coordinate {c} outside [0, {d})")
        idx = idx * d + c
    return idx


def unravel(shape: Sequence[int], index: int) -> tuple[int, ...]:
    coords = []
    for d in reversed(shape):
        index, c = divmod(index, d)
        coords.append(c)
    if index:
        raise IndexError("flat index out of range")
    return tuple(reversed(coords))

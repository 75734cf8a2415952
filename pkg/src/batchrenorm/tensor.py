"""Dense float64 tensor operations and seeded random generation.

Tensors are plain numpy float64 arrays (row-major). This module wraps the
handful of reductions, elementwise ops, and RNG draws the rest of the
package needs, with explicit shape validation so failures surface as
ShapeError instead of deep numpy tracebacks. All functions are pure.
"""

from __future__ import annotations

import numpy as np

Axes = tuple[int, ...]


class ShapeError(ValueError):
    """Operand shapes or axis indices are invalid for the requested op."""


def as_tensor(values) -> np.ndarray:
    """Coerce nested sequences / arrays to a float64 ndarray."""
    return np.asarray(values, dtype=np.float64)


def validate_axes(t: np.ndarray, axes) -> Axes:
    axes = tuple(int(a) for a in axes)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate reduction axes {axes}")
    for a in axes:
        if a < 0 or a >= t.ndim:
            raise ShapeError(f"axis {a} out of range for rank-{t.ndim} tensor")
    return axes


def reduced_shape(shape: tuple[int, ...], axes: Axes) -> tuple[int, ...]:
    return tuple(n for i, n in enumerate(shape) if i not in axes)


def expand_over_axes(t: np.ndarray, axes: Axes) -> np.ndarray:
    """Reinsert size-1 dims at previously reduced axes so t broadcasts back."""
    # Leading reduced axes need no reshape: numpy aligns trailing dims.
    if axes == tuple(range(len(axes))):
        return t
    out = t
    for a in sorted(axes):
        out = np.expand_dims(out, a)
    return out


def reduce_mean(t: np.ndarray, axes) -> np.ndarray:
    """Arithmetic mean over the given axes; reduced dims are removed."""
    axes = validate_axes(t, axes)
    return np.mean(t, axis=axes, dtype=np.float64)


def reduce_biased_var(t: np.ndarray, axes, mean: np.ndarray) -> np.ndarray:
    """Biased variance (divisor = reduced element count) around `mean`.

    `mean` must have the reduced shape of `t` for the same axes.
    """
    axes = validate_axes(t, axes)
    mean = as_tensor(mean)
    if mean.shape != reduced_shape(t.shape, axes):
        raise ShapeError(
            f"mean shape {mean.shape} != reduced shape {reduced_shape(t.shape, axes)}"
        )
    diff = t - expand_over_axes(mean, axes)
    return np.mean(diff * diff, axis=axes, dtype=np.float64)


def _binary(op, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return op(a, b)
    except ValueError as exc:
        raise ShapeError(f"incompatible shapes {np.shape(a)} and {np.shape(b)}") from exc


def add(a, b) -> np.ndarray:
    return _binary(np.add, a, b)


def sub(a, b) -> np.ndarray:
    return _binary(np.subtract, a, b)


def mul(a, b) -> np.ndarray:
    return _binary(np.multiply, a, b)


def div(a, b) -> np.ndarray:
    # No zero guard: callers guarantee positive denominators (sigma >= sqrt(eps)).
    return _binary(np.divide, a, b)


def scale(t, c: float) -> np.ndarray:
    return np.multiply(t, float(c))


def sqrt(t) -> np.ndarray:
    return np.sqrt(t)


def clip(t, lo: float, hi: float) -> np.ndarray:
    if lo > hi:
        raise ValueError(f"clip bounds reversed: lo={lo} > hi={hi}")
    return np.clip(t, lo, hi)


def broadcast_to(t, shape) -> np.ndarray:
    """Broadcast (size-1 dims stretch) to `shape`, returning a fresh array."""
    try:
        return np.array(np.broadcast_to(t, tuple(shape)), dtype=np.float64)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {np.shape(t)} to {tuple(shape)}") from exc


class Rng:
    """Deterministic random source: Philox counter-based generator under a
    64-bit seed. Identical seed + identical call sequence gives an identical
    stream; independent instances (distinct seeds) are safe to use
    concurrently, a single instance is single-writer.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise ValueError("std must be >= 0")
        return self._gen.normal(loc=mean, scale=std, size=shape).astype(
            np.float64, copy=False
        )

    def permutation(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be >= 0")
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)


def rng_normal(rng: Rng, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    return rng.normal(shape, mean, std)


def rng_shuffle(rng: Rng, n: int) -> np.ndarray:
    """Uniform random permutation of 0..n-1."""
    return rng.permutation(n)

"""Dense multi-way arrays and a general contraction oracle.

Conventions used throughout the package:

* All tensors are plain numpy arrays in row-major (C) order, last index
  fastest.  Reshapes never move data, they only reinterpret the shape.
* Real-valued work uses float64.  Fixed-point payloads are carried either
  as int64 code arrays or as float64 values that are exact multiples of a
  power-of-two step (both are exact, see ``ttnn.quant``).
* Integer contractions accumulate in int64.  Overflowing the accumulator
  is a hard error, never silent wraparound.
"""

import math

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the requested operation."""


class AccumulatorOverflow(OverflowError):
    """An integer contraction could exceed the 64-bit accumulator."""


# Conservative headroom below 2**63: reject anything that could get within
# a factor of 2 of the signed 64-bit limit.
_ACC_LIMIT = float(2**62)


def prod(dims):
    return math.prod(dims)


def reshape(t, new_shape):
    """Reinterpret ``t`` with ``new_shape`` without reordering elements."""
    t = np.asarray(t)
    new_shape = tuple(int(s) for s in new_shape)
    if prod(new_shape) != t.size:
        raise ShapeError(
            f"cannot reshape size {t.size} array to {new_shape} "
            f"(product {prod(new_shape)})"
        )
    return t.reshape(new_shape)


def _check_int_bounds(a, b, n_terms):
    if a.size == 0 or b.size == 0:
        return
    amax = float(np.max(np.abs(a)))
    bmax = float(np.max(np.abs(b)))
    if amax * bmax * max(n_terms, 1) >= _ACC_LIMIT:
        raise AccumulatorOverflow(
            f"integer contraction bound {amax * bmax * n_terms:.3g} "
            f"exceeds the 64-bit accumulator"
        )


def contract(a, b, a_axes, b_axes):
    """Sum-product of ``a`` and ``b`` over the paired axes.

    The result keeps the remaining axes of ``a`` followed by the remaining
    axes of ``b``, in order.  Integer inputs are accumulated in int64 and
    overflow raises :class:`AccumulatorOverflow`.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    a_axes = [int(ax) % max(a.ndim, 1) for ax in np.atleast_1d(a_axes)]
    b_axes = [int(ax) % max(b.ndim, 1) for ax in np.atleast_1d(b_axes)]
    if len(a_axes) != len(b_axes):
        raise ShapeError("a_axes and b_axes must pair up one-to-one")
    for ax, bx in zip(a_axes, b_axes):
        if a.shape[ax] != b.shape[bx]:
            raise ShapeError(
                f"contracted axis size mismatch: a axis {ax} has "
                f"{a.shape[ax]}, b axis {bx} has {b.shape[bx]}"
            )
    if np.issubdtype(a.dtype, np.integer) and np.issubdtype(b.dtype, np.integer):
        n_terms = prod(a.shape[ax] for ax in a_axes)
        _check_int_bounds(a, b, n_terms)
        a = a.astype(np.int64, copy=False)
        b = b.astype(np.int64, copy=False)
    return np.tensordot(a, b, axes=(a_axes, b_axes))


def outer(a, b):
    """Outer product; result shape is ``a.shape + b.shape``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if np.issubdtype(a.dtype, np.integer) and np.issubdtype(b.dtype, np.integer):
        _check_int_bounds(a, b, 1)
        a = a.astype(np.int64, copy=False)
        b = b.astype(np.int64, copy=False)
    return np.tensordot(a, b, axes=0)

"""Log-space primitives: matrix validation, lse / lcse reductions and log-add.

Nonnegative quantities are carried as their logarithms. Zero is represented by
``NEG_INF`` so that it is the identity of :func:`logadd`.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -np.inf

_AXES = {"rows": 0, "cols": 1, 0: 0, 1: 1}


class EmptyReductionError(ValueError):
    """Raised when a reduction has no elements (log of an empty sum)."""


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a float64 2-D array, rejecting NaN and +inf entries."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    check_log_values(arr, name)
    return arr


def check_log_values(arr: np.ndarray, name: str = "array") -> None:
    if np.isnan(arr).any():
        raise ValueError(f"{name} contains NaN")
    if np.isposinf(arr).any():
        raise ValueError(f"{name} contains +inf")


def _axis(axis) -> int:
    # "cols" sums out the column index, leaving one value per row.
    try:
        return _AXES[axis]
    except KeyError:
        raise ValueError(f"axis must be 'rows' or 'cols', got {axis!r}") from None


def lse(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(sum(exp(x))) along ``axis`` of an n-d array, using max-subtraction.

    Slices that are entirely ``NEG_INF`` reduce to ``NEG_INF``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] == 0:
        raise EmptyReductionError("empty reduction")
    m = x.max(axis=axis, keepdims=True)
    if m.size and m.min() == NEG_INF:
        return _lse_with_empty_slices(x, m, axis)
    return np.log(np.exp(x - m).sum(axis=axis)) + m.squeeze(axis)


def _lse_with_empty_slices(x: np.ndarray, m: np.ndarray, axis: int) -> np.ndarray:
    dead = m == NEG_INF
    # Shift by 0 where the max is -inf; exp(-inf - 0) = 0 gives log(0) below.
    shift = np.where(dead, 0.0, m)
    with np.errstate(divide="ignore"):
        s = np.log(np.exp(x - shift).sum(axis=axis, keepdims=True))
    return np.where(dead, NEG_INF, s + shift).squeeze(axis)


def lse_over_axis(m, axis="cols") -> np.ndarray:
    """Reduce a matrix with log-sum-exp.

    ``axis="cols"`` reduces across columns, giving one value per row;
    ``axis="rows"`` reduces down each column.
    """
    return lse(as_matrix(m), axis=_axis(axis))


def lcse(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Log-cumulative-sum-exp along ``axis`` of an n-d array, left to right."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] == 0:
        raise EmptyReductionError("empty reduction")
    return np.logaddexp.accumulate(x, axis=axis)


def lcse_over_axis(m, axis="cols") -> np.ndarray:
    """Prefix log-sum-exp of a matrix, scanning across columns or down rows."""
    return lcse(as_matrix(m), axis=_axis(axis))


def logadd(a, b):
    """log(exp(a) + exp(b)), elementwise; ``NEG_INF`` is the identity."""
    return np.logaddexp(a, b)

"""Input checking helpers used by the public functions."""

import numpy as np

from .exceptions import DimensionError, NumericalError

PROB_ATOL = 1e-9


def as_float_array(x, name="array"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        raise DimensionError(f"{name} must be at least 1-dimensional")
    return arr


def check_length(x, length, name="array"):
    """Check the trailing axis of ``x`` has ``length`` entries."""
    if x.shape[-1] != length:
        raise DimensionError(
            f"{name} has {x.shape[-1]} entries on its last axis, expected {length}"
        )
    return x


def check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise DimensionError(f"{names[0]} shape {a.shape} != {names[1]} shape {b.shape}")


def check_finite(x, name="array"):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{name} contains non-finite values")
    return x


def check_prob_vector(p, name="distribution", atol=PROB_ATOL):
    """Validate that every row along the last axis is a probability vector.

    Returns the input as a float64 array. Does not renormalize.
    """
    p = as_float_array(p, name)
    check_finite(p, name)
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    sums = p.sum(axis=-1)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=atol):
        raise ValueError(f"{name} does not sum to 1 (got {np.min(sums)}..{np.max(sums)})")
    return p


def normalize_labels(y):
    """Turn a nonnegative indicator/count vector into ``y / y.sum()``.

    Works row-wise on 2-D input. Rows with zero total mass are rejected.
    """
    y = as_float_array(y, "y")
    if np.any(y < 0):
        raise ValueError("label vector has negative entries")
    totals = y.sum(axis=-1, keepdims=True)
    if np.any(totals <= 0):
        raise ValueError("label vector has zero total mass")
    return y / totals


def check_cost_matrix(cost, n_rows=None, n_cols=None):
    cost = as_float_array(cost, "cost")
    if cost.ndim != 2:
        raise DimensionError(f"cost must be 2-D, got shape {cost.shape}")
    if n_rows is not None and cost.shape[0] != n_rows:
        raise DimensionError(f"cost has {cost.shape[0]} rows, expected {n_rows}")
    if n_cols is not None and cost.shape[1] != n_cols:
        raise DimensionError(f"cost has {cost.shape[1]} columns, expected {n_cols}")
    check_finite(cost, "cost")
    if np.any(cost < 0):
        raise ValueError("cost has negative entries")
    return cost

"""Small input-validation helpers used across modules."""

import numpy as np

from .errors import DimensionError


def as_float32(values, name="array"):
    arr = np.asarray(values, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_vector_pair(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"vector length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b

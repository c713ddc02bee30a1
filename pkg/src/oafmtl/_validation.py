"""Small input-checking helpers shared across modules."""

import numpy as np


def as_real_vector(x, name="x", allow_empty=False):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    return arr


def check_finite(x, name="x"):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_length(x, expected, name="x"):
    if len(x) != expected:
        raise ValueError(f"{name} has length {len(x)}, expected {expected}")
    return x


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)

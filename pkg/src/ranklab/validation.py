"""Input validation helpers used across estimators and the functional core."""

import numpy as np


def check_scores(scores, name="scores"):
    """Coerce to a 1-D float64 array and reject non-finite entries."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite (no NaN or inf)")
    return arr


def check_labels(labels, n=None, name="labels"):
    """Coerce to a 1-D int8 array of {0, 1} labels."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
    out = arr.astype(np.int8, copy=False)
    if not np.all((out == 0) | (out == 1)):
        raise ValueError(f"{name} must contain only 0/1 values")
    return out


def check_persistence(p):
    """Validate an RBP persistence parameter, strictly inside (0, 1)."""
    p = float(p)
    if not (0.0 < p < 1.0):
        raise ValueError(f"persistence p must lie in (0, 1), got {p}")
    return p


def check_indices(items, n_items, name="items"):
    """Coerce to a 1-D int64 index array and bounds-check against n_items."""
    arr = np.asarray(items, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= n_items):
        raise ValueError(f"{name} contains indices outside [0, {n_items})")
    return arr


def check_positive_int(value, name):
    value = int(value)
    if value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value}")
    return value

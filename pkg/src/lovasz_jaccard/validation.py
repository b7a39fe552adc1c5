"""Input checking shared by the loss, metric and optimizer entry points."""

import numpy as np


def as_float_vector(x, name="x"):
    """Return ``x`` as a 1-d float64 array, rejecting NaN/inf."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_float_matrix(x, name="x"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_indicator(x, name="delta"):
    """Return a {0,1} indicator as float64; anything else is rejected."""
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr.astype(np.float64)
    arr = arr.astype(np.float64)
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError(f"{name} entries must be exactly 0 or 1")
    return arr


def as_binary_labels(y, name="y"):
    """Labels in {-1, +1}."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    arr = arr.astype(np.float64)
    if not np.all((arr == 1.0) | (arr == -1.0)):
        raise ValueError(f"{name} must contain only -1 and +1")
    return arr


def as_labels(y, n_classes=None, name="y"):
    """Integer class labels, optionally bounded by ``n_classes``."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise ValueError(f"{name} must contain integer class labels")
    arr = arr.astype(np.int64)
    if n_classes is not None and arr.size:
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(
                f"{name} contains labels outside the class set 0..{n_classes - 1}"
            )
    return arr


def check_same_length(a, b, names=("a", "b")):
    if len(a) != len(b):
        raise ValueError(
            f"length mismatch: {names[0]} has {len(a)} entries, {names[1]} has {len(b)}"
        )

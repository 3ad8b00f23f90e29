"""Input validation helpers shared by the estimators and encoders.

Everything internal runs in float64; converters below enforce that and the
finiteness contract at public entry points.
"""

import numpy as np

from .errors import ConfigurationError, DataError, NumericError


def _require_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains NaN or Inf")


def as_maps(x, name="maps"):
    """Validate an H x W x D feature-map stack, returning a float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise DataError(f"{name} must be a non-empty (H, W, D) array, got shape {arr.shape}")
    _require_finite(arr, name)
    return arr


def as_matrix(x, name="descriptors"):
    """Validate a (T, dim) descriptor matrix; a single vector becomes one row."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"{name} must be a non-empty (T, dim) matrix, got shape {arr.shape}")
    _require_finite(arr, name)
    return arr


def as_vector(x, name="vector"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise DataError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    _require_finite(arr, name)
    return arr


def check_dim(actual, expected, what):
    if actual != expected:
        raise ConfigurationError(f"{what}: expected dimension {expected}, got {actual}")

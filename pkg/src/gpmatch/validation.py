"""Small input-validation helpers used by the public API."""

import numpy as np

__all__ = ["as_coords", "as_feature_matrix", "check_finite"]


def as_coords(coords, name="coords"):
    """Coerce to a float64 (N, 2) array of finite 2-D coordinates."""
    a = np.asarray(coords, dtype=np.float64)
    if a.ndim == 1:
        if a.shape != (2,):
            raise ValueError(f"{name}: expected a 2-vector, got shape {a.shape}")
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != 2:
        raise ValueError(f"{name}: expected shape (n, 2), got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name}: contains non-finite values")
    return a


def as_feature_matrix(X, name="X"):
    """Coerce to a float64 (N, F) matrix of finite feature vectors."""
    a = np.asarray(X, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D feature matrix, got ndim {a.ndim}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name}: contains non-finite values")
    return a


def check_finite(a, name="array"):
    if not np.isfinite(a).all():
        raise ValueError(f"{name}: contains non-finite values")
    return a

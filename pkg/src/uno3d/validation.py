"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numpy as np

__all__ = ["check_volumes", "check_targets", "check_finite", "check_positive_int"]


def check_finite(a: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return a


def check_volumes(X, name: str = "X") -> np.ndarray:
    """Return ``X`` as a float64 ``(N, X, Y, Z)`` array; a single volume gains a batch axis."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"{name} must have shape (n_samples, X, Y, Z), got {X.shape}")
    if X.shape[0] == 0 or min(X.shape[1:]) < 1:
        raise ValueError(f"{name} is empty: shape {X.shape}")
    return check_finite(X, name)


def check_targets(y, X: np.ndarray, name: str = "y") -> np.ndarray:
    """Return ``y`` as float64 ``(N, 3, X, Y, T)`` consistent with the volumes ``X``."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 4 and X.shape[0] == 1:
        y = y[None]
    if y.ndim != 5 or y.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n_samples, 3, X, Y, T), got {y.shape}")
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"{name} has {y.shape[0]} samples but X has {X.shape[0]}")
    if y.shape[2:4] != X.shape[1:3]:
        raise ValueError(f"{name} grid {y.shape[2:4]} does not match the X grid {X.shape[1:3]}")
    return check_finite(y, name)


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)

"""Input validation helpers for the array-facing estimator API."""

import numpy as np

from .errors import ParameterError, ShapeError


def check_image_batch(X, channels: int, name: str = "X") -> np.ndarray:
    """Validate a (N, C, H, W) float batch and return it as float32."""
    X = np.asarray(X)
    if X.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N, {channels}, H, W), got {X.ndim}-D")
    if X.shape[1] != channels:
        raise ShapeError(f"{name} must have {channels} channels, got {X.shape[1]}")
    if X.shape[0] == 0:
        raise ParameterError(f"{name} is empty")
    X = X.astype(np.float32, copy=False)
    if not np.isfinite(X).all():
        raise ParameterError(f"{name} contains non-finite values")
    return X


def check_unit_range(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X)
    lo, hi = float(X.min()), float(X.max())
    if lo < 0.0 or hi > 1.0:
        raise ParameterError(f"{name} must lie in [0, 1], found range [{lo}, {hi}]")
    return X


def check_plane_batch(y, name: str = "y") -> np.ndarray:
    """Validate (N, H, W) or (N, 1, H, W) target planes, returned as (N, H, W)."""
    y = np.asarray(y)
    if y.ndim == 4 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 3:
        raise ShapeError(f"{name} must be (N, H, W) or (N, 1, H, W), got shape {y.shape}")
    return y.astype(np.float32, copy=False)

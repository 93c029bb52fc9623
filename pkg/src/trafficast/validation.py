"""Input validation helpers shared by the estimator facade and the pipeline."""

import numpy as np

from .errors import DataError, ShapeError


def as_float_matrix(X, name="X"):
    """Coerce to a finite 2-D float64 array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {X.shape}")
    if X.size and not np.isfinite(X).all():
        raise DataError(f"{name} contains NaN or Inf")
    return X


def as_float_vector(y, name="y"):
    """Coerce to a finite 1-D float64 array."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {y.shape}")
    if y.size and not np.isfinite(y).all():
        raise DataError(f"{name} contains NaN or Inf")
    return y


def check_matching_rows(X, y, x_name="X", y_name="y"):
    if X.shape[0] != y.shape[0]:
        raise ShapeError(
            f"{x_name} and {y_name} disagree on rows: {X.shape[0]} vs {y.shape[0]}")


def check_window_width(X, window, name="X"):
    if X.shape[1] != window:
        raise ShapeError(
            f"{name} has {X.shape[1]} columns but the model window is {window}")

"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, IntegrityError


def check_features(X, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 2-d float64 matrix, optionally enforcing the width."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ConfigError(f"expected a 2-d feature matrix, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ConfigError("feature matrix has no rows")
    if not np.isfinite(X).all():
        raise ConfigError("feature matrix contains non-finite values")
    if dim is not None and X.shape[1] != dim:
        raise ConfigError(f"feature matrix has {X.shape[1]} columns, expected {dim}")
    return X


def check_labels(y, n_classes: int, n_samples: int | None = None) -> np.ndarray:
    """Coerce to integer class indices within range."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ConfigError(f"expected a 1-d label array, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.asarray(y, dtype=np.int64)
        if not np.array_equal(rounded, y):
            raise ConfigError("labels must be integers")
        y = rounded
    y = y.astype(np.int64)
    if n_samples is not None and y.shape[0] != n_samples:
        raise ConfigError(f"{y.shape[0]} labels for {n_samples} samples")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        bad = int(y[(y < 0) | (y >= n_classes)][0])
        raise IntegrityError(f"label {bad} outside 0..{n_classes - 1}")
    return y

"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array
from sklearn.utils.validation import check_X_y

from .exceptions import ConfigurationError


def check_conditions(X, n_features=None):
    X = check_array(X, dtype=np.float64, ensure_2d=False)
    if X.ndim == 1:
        X = X[None, :]
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_training_data(X, Y):
    X, Y = check_X_y(X, Y, multi_output=True, y_numeric=True, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    return X, Y


def spawn_seeds(random_state, n):
    """``n`` independent integer seeds derived from ``random_state``."""
    if isinstance(random_state, np.random.Generator):
        return [int(s) for s in random_state.integers(0, 2**62, size=n)]
    ss = np.random.SeedSequence(random_state)
    return [int(c.generate_state(2, dtype=np.uint64)[0] >> np.uint64(2)) for c in ss.spawn(n)]


def check_positive(name, value, strict=True):
    if value is None or not np.isfinite(value) or (value <= 0 if strict else value < 0):
        raise ConfigurationError(f"{name} must be {'positive' if strict else 'non-negative'}, got {value}")
    return value

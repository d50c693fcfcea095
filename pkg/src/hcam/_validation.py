"""Input validation shared by the estimators."""

import numpy as np
from sklearn.utils import check_array


def check_data(X, min_samples=1, n_features=None, min_features=1) -> np.ndarray:
    X = check_array(
        getattr(X, "values", X),
        dtype=np.float64,
        ensure_min_samples=min_samples,
        ensure_min_features=min_features,
    )
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_target(y, n_samples: int) -> np.ndarray:
    y = check_array(y, ensure_2d=False, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("y must be one-dimensional")
    if y.shape[0] != n_samples:
        raise ValueError(f"y has {y.shape[0]} rows, X has {n_samples}")
    return y

"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def check_lengths(X) -> np.ndarray:
    """Interval lengths as a 1D float array (accepts ``(n,)`` or ``(n, 1)``)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError("lengths must be a single column")
        X = X[:, 0]
    X = check_array(X.reshape(-1, 1), dtype=float).ravel()
    if np.any(X < 0):
        raise ValueError("lengths must be nonnegative")
    return X


def check_layer_rows(X) -> np.ndarray:
    """Layer configurations as an int8 ``(n_samples, width)`` array of +-1."""
    X = check_array(X, dtype=None, ensure_2d=True)
    if not np.isin(X, (-1, 1)).all():
        raise ValueError("layer configurations must contain only +1 and -1")
    if X.shape[1] % 2 == 0:
        raise ValueError("layer rows must have odd width (centred on site 0)")
    return X.astype(np.int8)

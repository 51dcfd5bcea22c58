"""Input validation for the estimator API."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .errors import ShapeMismatch


def check_poses(X, n_joints: int | None = None, dims: int = 3) -> np.ndarray:
    """Coerce ``X`` to a finite ``(n, J, dims)`` float array.

    Accepts ``(n, J, dims)`` or flattened ``(n, J * dims)`` input.
    """
    X = np.asarray(X, dtype=np.float64) if not hasattr(X, "joints") else X.joints[None]
    if X.ndim == 3:
        if X.shape[2] != dims:
            raise ShapeMismatch(f"expected trailing dimension {dims}, got {X.shape}")
        flat = check_array(X.reshape(len(X), -1), dtype=np.float64)
        X = flat.reshape(len(flat), -1, dims)
    else:
        flat = check_array(X, dtype=np.float64)
        if flat.shape[1] % dims:
            raise ShapeMismatch(f"{flat.shape[1]} features is not a multiple of {dims}")
        X = flat.reshape(len(flat), -1, dims)
    if n_joints is not None and X.shape[1] != n_joints:
        raise ShapeMismatch(f"expected {n_joints} joints, got {X.shape[1]}")
    return X


def check_estimates(X, n_joints: int | None = None) -> np.ndarray:
    """Stacked (P, O1-decoded, O2-decoded) estimates, shape ``(n, 3, J, 3)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4 or X.shape[1] != 3 or X.shape[3] != 3:
        raise ShapeMismatch(f"expected (n, 3, J, 3) estimates, got {X.shape}")
    check_array(X.reshape(len(X), -1))
    if n_joints is not None and X.shape[2] != n_joints:
        raise ShapeMismatch(f"expected {n_joints} joints, got {X.shape[2]}")
    return X

"""Input checks shared by the estimators and the functional API."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .errors import ColumnMismatch, DegenerateDesign, OneClassOnly


def check_design_arrays(X, y, column_names=None, *, allow_empty_columns=True):
    """Return ``(X, y, names)`` as float arrays with binary ``y``.

    Raises DegenerateDesign for zero rows, and for zero columns unless
    ``allow_empty_columns`` (an intercept-only fit) is set.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DegenerateDesign("design has zero rows")
    if X.shape[1] == 0 and not allow_empty_columns:
        raise DegenerateDesign("design has zero columns")
    if X.shape[1]:
        X = check_array(X, dtype=float, ensure_min_samples=1)
    y = np.asarray(y, dtype=float).ravel()
    check_consistent_length(X, y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if column_names is None:
        column_names = tuple(f"x{i}" for i in range(X.shape[1]))
    column_names = tuple(str(c) for c in column_names)
    if len(column_names) != X.shape[1]:
        raise ColumnMismatch(f"{len(column_names)} names for {X.shape[1]} columns")
    if len(set(column_names)) != len(column_names):
        raise ColumnMismatch("duplicate column names")
    if "intercept" in column_names:
        raise ColumnMismatch("'intercept' is reserved")
    return X, y, column_names


def check_scores_labels(scores, labels):
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(int)
    check_consistent_length(scores, labels)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0/1")
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise OneClassOnly("both classes must be present")
    return scores, labels

"""Input validation helpers for array-facing entry points."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, InputError, LabelError
from .network import TASKS


def check_trials(X, n_channels: int | None = None, n_samples: int | None = None
                 ) -> np.ndarray:
    """Coerce to a finite float64 (n_trials, E, T) array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise DimensionError(f"trials must be (n, E, T), got shape {X.shape}")
    if X.shape[0] == 0:
        raise InputError("empty trial array")
    if n_channels is not None and X.shape[1] != n_channels:
        raise DimensionError(f"expected {n_channels} channels, got {X.shape[1]}")
    if n_samples is not None and X.shape[2] != n_samples:
        raise DimensionError(f"expected {n_samples} samples, got {X.shape[2]}")
    if not np.all(np.isfinite(X)):
        raise InputError("trials contain non-finite values")
    return X


def check_labels(y, n_trials: int, n_classes: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_trials,):
        raise DimensionError(f"labels shape {y.shape} does not match {n_trials} trials")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.asarray(y, dtype=np.float64)
        if not np.all(rounded == np.floor(rounded)):
            raise LabelError("labels must be integers")
    y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise LabelError("labels must be nonnegative")
    if n_classes is not None and y.size and y.max() >= n_classes:
        raise LabelError(f"label {y.max()} out of range for {n_classes} classes")
    return y


def check_tasks(tasks, n_trials: int) -> np.ndarray:
    """Normalize per-trial task tags to the canonical "MI"/"ME" strings.

    Accepts the strings themselves (any case) or 0/1 for (MI, ME).
    """
    tasks = np.asarray(tasks)
    if tasks.shape != (n_trials,):
        raise DimensionError(f"tasks shape {tasks.shape} does not match {n_trials} trials")
    out = np.empty(n_trials, dtype=object)
    for i, t in enumerate(tasks):
        if isinstance(t, (int, np.integer)) and t in (0, 1):
            out[i] = TASKS[int(t)]
        elif str(t).upper() in TASKS:
            out[i] = str(t).upper()
        else:
            raise InputError(f"unknown task tag {t!r}; expected MI/ME or 0/1")
    return out

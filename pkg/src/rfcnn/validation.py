"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np


def check_spectrogram_batch(X, dtype=None, n_channels: int | None = None) -> np.ndarray:
    """Validate a 4-D [n, channels, frequency, time] batch of finite reals."""
    X = np.asarray(X, dtype=dtype)
    if X.ndim != 4:
        raise ValueError(
            f"expected a 4-D [n, channels, frequency, time] array, "
            f"got shape {X.shape}"
        )
    if min(X.shape) < 1:
        raise ValueError(f"empty axis in input of shape {X.shape}")
    if n_channels is not None and X.shape[1] != n_channels:
        raise ValueError(
            f"expected {n_channels} channels, got {X.shape[1]}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains non-finite values")
    return X


def check_labels(y, n_samples: int | None = None) -> np.ndarray:
    """Validate an integer label vector."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ValueError(
            f"found {y.shape[0]} labels for {n_samples} samples"
        )
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(np.asarray(y, dtype=np.float64))
        if not np.allclose(rounded, y):
            raise ValueError("labels must be integers")
        y = rounded.astype(np.int64)
    return y.astype(np.int64)

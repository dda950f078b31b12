"""Training-time augmentation: mix-up and random temporal rolling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MixupSample:
    """A convex combination of two samples and their target vectors."""

    x: np.ndarray
    y: np.ndarray
    lam: float


def mixup(a, b, alpha: float = 0.3, rng=None, lam: float | None = None) -> MixupSample:
    """Mix two (x, y) pairs with weight ``lam ~ Beta(alpha, alpha)``.

    ``y`` vectors may be one-hot or arbitrary probability vectors; the
    result stays on the simplex.  Pass ``lam`` to pin the weight.
    """
    xa, ya = a
    xb, yb = b
    if np.shape(xa) != np.shape(xb):
        raise ValueError(f"input shapes differ: {np.shape(xa)} vs {np.shape(xb)}")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    x = lam * np.asarray(xa) + (1.0 - lam) * np.asarray(xb)
    y = lam * np.asarray(ya) + (1.0 - lam) * np.asarray(yb)
    return MixupSample(x=x, y=y, lam=lam)


def mixup_batch(x, y, alpha: float = 0.3, rng=None):
    """Batch-level mix-up: permute the batch against itself and mix with a
    single ``lam`` drawn per batch.  ``y`` is [B, num_classes]."""
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(x.shape[0])
    x_mixed = lam * x + (1.0 - lam) * x[perm]
    y_mixed = lam * y + (1.0 - lam) * y[perm]
    return x_mixed, y_mixed, lam


def roll_time(x: np.ndarray, shift: int | None = None, rng=None) -> np.ndarray:
    """Circularly shift a tensor along its last (time) axis.  ``shift``
    defaults to a uniform draw in [0, T)."""
    t = x.shape[-1]
    if shift is None:
        shift = int(rng.integers(0, t))
    return np.roll(x, shift, axis=-1)


def roll_time_batch(x: np.ndarray, rng) -> np.ndarray:
    """Roll each sample of a batch independently."""
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = np.roll(x[i], int(rng.integers(0, x.shape[-1])), axis=-1)
    return out

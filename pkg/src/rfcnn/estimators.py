"""Scikit-learn compatible wrappers around the network and the
normalization step, so the pipeline composes with the wider ecosystem
(``Pipeline``, ``clone``, ``cross_val_score``, ...).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .arch import make_network
from .audio import STD_FLOOR
from .network import Network
from .training import Schedule, TrainSettings, train_loop
from .validation import check_labels, check_spectrogram_batch


class SpectrogramClassifier(BaseEstimator, ClassifierMixin):
    """Receptive-field-regularized CNN classifier over spectrogram batches.

    ``X`` is a 4-D array [n, channels, frequency, time]; ``rho`` sets the
    maximum receptive field and ``variant`` the block flavor ("plain",
    "preact", "shakeshake", "freqaware").  Defaults are desk-scale; the
    full-scale recipe uses base_width=128, epochs=350 and the 1e-4 to 5e-6
    schedule.
    """

    def __init__(self, rho=5, variant="plain", base_width=16, epochs=30,
                 batch_size=32, lr_start=1e-3, lr_end=5e-5,
                 mixup=False, mixup_alpha=0.3, roll=False,
                 freq_mode="fraction", seed=0):
        self.rho = rho
        self.variant = variant
        self.base_width = base_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.mixup = mixup
        self.mixup_alpha = mixup_alpha
        self.roll = roll
        self.freq_mode = freq_mode
        self.seed = seed

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on (X, y).  Validation data defaults to the training set
        (metrics recording only; nothing is selected on it)."""
        X = check_spectrogram_batch(X, dtype=np.float32)
        y = check_labels(y, X.shape[0])
        self.classes_ = np.unique(y)
        index_of = {label: i for i, label in enumerate(self.classes_)}
        y_idx = np.asarray([index_of[label] for label in y])
        if X_val is None:
            X_val, y_val_idx = X, y_idx
        else:
            X_val = check_spectrogram_batch(X_val, dtype=np.float32)
            y_val = check_labels(y_val, X_val.shape[0])
            y_val_idx = np.asarray([index_of[label] for label in y_val])
        spec = make_network(
            self.rho, variant=self.variant,
            num_classes=max(2, len(self.classes_)),
            base_width=self.base_width, in_channels=X.shape[1],
            freq_mode=self.freq_mode,
        )
        self.network_ = Network(spec, seed=self.seed, dtype=np.float32)
        settings = TrainSettings(
            schedule=Schedule.scaled(self.epochs, self.lr_start, self.lr_end),
            batch_size=self.batch_size,
            mixup_enabled=self.mixup,
            mixup_alpha=self.mixup_alpha,
            roll_enabled=self.roll,
            seed=self.seed,
        )
        self.report_ = train_loop(
            self.network_, (X, y_idx), (X_val, y_val_idx), settings
        )
        self.network_.set_mode("eval")
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = check_spectrogram_batch(
            X, dtype=np.float32, n_channels=self.network_.spec.in_channels
        )
        probs = self.network_.predict_proba(X)
        return probs[:, : len(self.classes_)] / probs[
            :, : len(self.classes_)
        ].sum(axis=1, keepdims=True)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[probs.argmax(axis=1)]


class SpectrogramNormalizer(BaseEstimator, TransformerMixin):
    """Per (channel, mel-bin) standardization fitted on the training split.

    Statistics pool over samples and frames; the standard deviation is
    floored so constant bins map to zero.
    """

    def fit(self, X, y=None):
        X = check_spectrogram_batch(X, dtype=np.float64)
        self.mean_ = X.mean(axis=(0, 3))
        self.std_ = np.maximum(X.std(axis=(0, 3)), STD_FLOOR)
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X)
        if X.shape[1:3] != self.mean_.shape:
            raise ValueError(
                f"input (channel, mel) {X.shape[1:3]} does not match fitted "
                f"{self.mean_.shape}"
            )
        return (X - self.mean_[None, :, :, None]) / self.std_[None, :, :, None]

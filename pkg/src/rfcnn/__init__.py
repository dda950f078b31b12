"""Receptive-field-regularized CNNs for spectrogram classification.

The package couples an analytic receptive-field calculus with an
executable network family (plain / pre-activation / shake-shake /
frequency-aware residual nets over mel spectrograms), the matching audio
preprocessing and training recipe, and synthetic tasks that isolate the
value of frequency-aware convolution at desk scale.
"""

__version__ = "0.1.0"

from .arch import (
    BlockSpec,
    LayerSpec,
    NetworkSpec,
    Rho,
    make_network,
    parse_spec,
    rho_to_kernels,
    serialize_spec,
)
from .audio import (
    AudioClip,
    NormStats,
    PipelineSettings,
    SpectrogramClip,
    apply_norm,
    fit_norm,
    load_wav,
    mel_filterbank,
    resample,
    spectrogram_pipeline,
    stft,
)
from .augment import MixupSample, mixup, mixup_batch, roll_time
from .estimators import SpectrogramClassifier, SpectrogramNormalizer
from .network import Network
from .receptive_field import (
    RfState,
    empirical_rf,
    max_rf,
    rf_step,
    rf_table,
    verify_reference_table,
)
from .synthetic import SynthTask, generate
from .training import (
    Adam,
    Schedule,
    TrainReport,
    TrainSettings,
    average_predictions,
    cross_entropy,
    lr_at,
    summarize_runs,
    train_loop,
)

__all__ = [
    "__version__",
    "Adam",
    "AudioClip",
    "BlockSpec",
    "LayerSpec",
    "MixupSample",
    "Network",
    "NetworkSpec",
    "NormStats",
    "PipelineSettings",
    "RfState",
    "Rho",
    "Schedule",
    "SpectrogramClassifier",
    "SpectrogramClip",
    "SpectrogramNormalizer",
    "SynthTask",
    "TrainReport",
    "TrainSettings",
    "apply_norm",
    "average_predictions",
    "cross_entropy",
    "empirical_rf",
    "fit_norm",
    "generate",
    "load_wav",
    "lr_at",
    "make_network",
    "max_rf",
    "mel_filterbank",
    "mixup",
    "mixup_batch",
    "parse_spec",
    "resample",
    "rf_step",
    "rf_table",
    "rho_to_kernels",
    "roll_time",
    "serialize_spec",
    "spectrogram_pipeline",
    "stft",
    "summarize_runs",
    "train_loop",
    "verify_reference_table",
]

"""Deterministic synthetic spectrogram datasets for desk-scale experiments.

The frequency-position task places the *same* small blob at class-specific
frequency bands (random time position), so classes differ only by absolute
frequency.  A frequency-translation-invariant classifier whose units never
see border padding cannot beat chance on it, while a frequency-aware one
can; a margin at least half the model's receptive field keeps padding
information away from every unit that sees a pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import SpectrogramClip

TASK_KINDS = ("freq-position", "pattern-only")


@dataclass(frozen=True)
class SynthTask:
    """Parameters of one synthetic dataset.

    ``band_spacing`` pins the distance between consecutive class band
    centers.  Setting it to the model's total stride product (16 for this
    network family) makes all class positions congruent modulo the pooled
    grid, so stride/pooling phase carries no class information and only a
    genuinely frequency-aware model can separate the classes.  When unset,
    centers spread evenly over the margin-respecting strip.
    """

    kind: str = "freq-position"
    num_classes: int = 4
    mel_bins: int = 64
    frames: int = 64
    pattern_size: int = 8
    margin: int = 16
    seed: int = 0
    channels: int = 2
    pattern_amplitude: float = 1.0
    noise_amplitude: float = 0.05  # 5% of the pattern amplitude
    band_spacing: int | None = None
    # class patterns are part of the task identity, not of one dataset
    # draw: train and test splits generated with different seeds share them
    pattern_seed: int = 1000

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        usable = self.mel_bins - 2 * self.margin
        if usable < self.pattern_size:
            raise ValueError(
                f"pattern ({self.pattern_size}) plus margin ({self.margin}) "
                f"exceed mel_bins ({self.mel_bins})"
            )
        if self.band_spacing is not None:
            span = (self.num_classes - 1) * self.band_spacing + self.pattern_size
            if span > usable:
                raise ValueError(
                    f"{self.num_classes} classes spaced {self.band_spacing} "
                    f"bins apart need {span} usable bins, "
                    f"got {usable} (pattern + margin exceed mel_bins)"
                )
        if self.pattern_size > self.frames:
            raise ValueError("pattern does not fit in the time extent")


def _bump(size: int, amplitude: float) -> np.ndarray:
    """Fixed smooth 2-D blob (raised-cosine profile)."""
    ramp = 0.5 - 0.5 * np.cos(2.0 * np.pi * (np.arange(size) + 0.5) / size)
    return amplitude * np.outer(ramp, ramp)


def class_frequency_bands(task: SynthTask) -> list[tuple[int, int]]:
    """Per-class frequency interval [lo, hi) of the pattern placement.

    With ``band_spacing`` set, consecutive band starts are exactly that far
    apart and the whole arrangement is centered in the usable strip;
    otherwise band centers spread evenly across it, the first and last
    sitting tight against the margins.
    """
    half = task.pattern_size / 2.0
    if task.band_spacing is not None:
        span = (task.num_classes - 1) * task.band_spacing + task.pattern_size
        usable = task.mel_bins - 2 * task.margin
        first = task.margin + (usable - span) // 2
        return [
            (first + k * task.band_spacing,
             first + k * task.band_spacing + task.pattern_size)
            for k in range(task.num_classes)
        ]
    lo = task.margin + half
    hi = task.mel_bins - task.margin - half
    centers = np.linspace(lo, hi, task.num_classes)
    bands = []
    for c in centers:
        start = int(round(c - half))
        bands.append((start, start + task.pattern_size))
    return bands


def generate(task: SynthTask, n: int) -> list[SpectrogramClip]:
    """Generate ``n`` clips with balanced labels (label of clip ``i`` is
    ``i % num_classes``), deterministic in ``task.seed``."""
    if n < task.num_classes:
        raise ValueError(f"need n >= num_classes, got {n} < {task.num_classes}")
    rng = np.random.default_rng(task.seed)
    ps = task.pattern_size
    bands = class_frequency_bands(task)
    if task.kind == "freq-position":
        patterns = [_bump(ps, task.pattern_amplitude)] * task.num_classes
    else:
        pattern_rng = np.random.default_rng(task.pattern_seed)
        patterns = [
            task.pattern_amplitude * pattern_rng.uniform(0.25, 1.0, size=(ps, ps))
            for _ in range(task.num_classes)
        ]
    clips = []
    for i in range(n):
        label = i % task.num_classes
        values = rng.uniform(
            0.0, task.noise_amplitude,
            size=(task.channels, task.mel_bins, task.frames),
        )
        t0 = int(rng.integers(0, task.frames - ps + 1))
        if task.kind == "freq-position":
            f0 = bands[label][0]
        else:
            f0 = int(rng.integers(task.margin, task.mel_bins - task.margin - ps + 1))
        values[:, f0 : f0 + ps, t0 : t0 + ps] += patterns[label]
        clips.append(
            SpectrogramClip(
                values=values.astype(np.float32),
                label=label,
                source_id=f"synth-{task.kind}-{task.seed}-{i:05d}",
            )
        )
    return clips


def as_arrays(clips: list[SpectrogramClip], dtype=np.float32):
    """Stack clips into ``(x [n, C, F, T], y [n])`` for training."""
    shapes = {c.values.shape for c in clips}
    if len(shapes) != 1:
        raise ValueError(f"clips have mixed shapes: {sorted(shapes)}")
    x = np.stack([c.values for c in clips]).astype(dtype)
    y = np.asarray([c.label for c in clips])
    if any(c.label is None for c in clips):
        raise ValueError("unlabeled clip in dataset")
    return x, y

"""Audio-to-input pipeline: WAV ingestion, resampling, STFT, perceptual
weighting, Mel projection, and per-bin normalization.

The default pipeline: down-sample to 22.05 kHz, STFT with a 2048-sample
Hann window and 25% overlap (hop 1536), A-weighted log-power spectrum,
256-bin Mel projection, each stereo channel processed independently.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly


class WavFormatError(ValueError):
    """Unsupported or corrupt WAV data."""


@dataclass
class AudioClip:
    """Raw audio: ``samples [channels, n]`` scaled to [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    @property
    def channels(self) -> int:
        return self.samples.shape[0]


@dataclass
class SpectrogramClip:
    """Preprocessed input: ``values [channels, mel, frames]`` plus label
    and provenance."""

    values: np.ndarray
    label: int | None = None
    source_id: str = ""

    @property
    def frames(self) -> int:
        return self.values.shape[2]


@dataclass
class NormStats:
    """Per (channel, mel-bin) normalization statistics; ``std`` is floored
    at fit time so it is always positive."""

    mean: np.ndarray
    std: np.ndarray


STD_FLOOR = 1e-5


# -- WAV I/O ---------------------------------------------------------------

_PCM16_SCALE = 32768.0


def load_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file (16-bit PCM or 32-bit float, 1-2 channels)
    into an AudioClip with samples in [-1, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = data[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise WavFormatError(f"{path}: truncated data chunk")
            payload = body
        pos += 8 + chunk_size + (chunk_size & 1)
    if fmt is None or payload is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if channels not in (1, 2):
        raise WavFormatError(f"{path}: {channels} channels unsupported")
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(payload, dtype="<i2").astype(np.float64)
        samples = raw / _PCM16_SCALE
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: unsupported encoding (format={audio_format}, bits={bits})"
        )
    if channels > 1:
        samples = samples.reshape(-1, channels).T
    else:
        samples = samples.reshape(1, -1)
    return AudioClip(samples=np.ascontiguousarray(samples), sample_rate=rate)


def write_wav(path, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write an AudioClip as 16-bit PCM or 32-bit float WAV."""
    interleaved = clip.samples.T.reshape(-1)
    if encoding == "pcm16":
        ints = np.clip(np.round(interleaved * _PCM16_SCALE), -32768, 32767)
        payload = ints.astype("<i2").tobytes()
        audio_format, bits = 1, 16
    elif encoding == "float32":
        payload = interleaved.astype("<f4").tobytes()
        audio_format, bits = 3, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    channels = clip.channels
    byte_rate = clip.sample_rate * channels * bits // 8
    block_align = channels * bits // 8
    fmt = struct.pack(
        "<HHIIHH", audio_format, channels, clip.sample_rate,
        byte_rate, block_align, bits,
    )
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


# -- resampling --------------------------------------------------------------


def resample(clip: AudioClip, target_hz: int = 22050,
             allow_upsample: bool = False) -> AudioClip:
    """Polyphase (Kaiser-windowed sinc) resampling to ``target_hz``.

    Already-at-target clips pass through untouched; upsampling is rejected
    unless explicitly allowed.  Output length is ``round(n * target / source)``.
    """
    if clip.sample_rate == target_hz:
        return clip
    if clip.sample_rate < target_hz and not allow_upsample:
        raise ValueError(
            f"refusing to upsample {clip.sample_rate} Hz to {target_hz} Hz "
            "(pass allow_upsample=True to override)"
        )
    g = np.gcd(clip.sample_rate, target_hz)
    up, down = target_hz // g, clip.sample_rate // g
    out = resample_poly(clip.samples, up, down, axis=1)
    n_out = int(round(clip.samples.shape[1] * target_hz / clip.sample_rate))
    if out.shape[1] > n_out:
        out = out[:, :n_out]
    elif out.shape[1] < n_out:
        out = np.pad(out, ((0, 0), (0, n_out - out.shape[1])))
    return AudioClip(samples=out, sample_rate=target_hz)


# -- STFT --------------------------------------------------------------------


def stft(signal: np.ndarray, window: int = 2048, overlap: float = 0.25,
         window_kind: str = "hann", hop: int | None = None) -> np.ndarray:
    """Short-time Fourier transform of a 1-D signal.

    Hop defaults to ``window * (1 - overlap)`` (1536 for the canonical
    2048/25% configuration); frames are laid left-aligned with no signal
    padding, ``frames = (n - window) // hop + 1``; one-sided spectrum with
    ``window // 2 + 1`` bins.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ValueError("stft expects a single channel")
    if signal.shape[0] < window:
        raise ValueError(
            f"signal length {signal.shape[0]} shorter than one window ({window})"
        )
    if hop is None:
        hop = int(round(window * (1.0 - overlap)))
    if hop < 1:
        raise ValueError("hop must be >= 1")
    if window_kind == "hann":
        taper = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)
    elif window_kind == "rect":
        taper = np.ones(window)
    else:
        raise ValueError(f"unknown window kind {window_kind!r}")
    n_frames = (signal.shape[0] - window) // hop + 1
    strides = (signal.strides[0] * hop, signal.strides[0])
    frames = np.lib.stride_tricks.as_strided(
        signal, shape=(n_frames, window), strides=strides
    )
    spec = np.fft.rfft(frames * taper, axis=1)
    return spec.T  # [bins, frames]


def stft_bin_frequencies(window: int = 2048, sr: int = 22050) -> np.ndarray:
    return np.arange(window // 2 + 1) * (sr / window)


# -- perceptual weighting ------------------------------------------------------

POWER_FLOOR = 1e-10


def a_weighting_db(freqs: np.ndarray) -> np.ndarray:
    """Standard A-weighting curve in dB, normalized to exactly 0 dB at
    1 kHz; clamped at -200 dB so the DC bin stays finite."""
    f2 = np.asarray(freqs, dtype=np.float64) ** 2
    num = (12194.0 ** 2) * f2 ** 2
    den = (
        (f2 + 20.6 ** 2)
        * np.sqrt((f2 + 107.7 ** 2) * (f2 + 737.9 ** 2))
        * (f2 + 12194.0 ** 2)
    )
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(num / den)
    ref = 20.0 * np.log10(
        (12194.0 ** 2 * 1000.0 ** 4)
        / (
            (1000.0 ** 2 + 20.6 ** 2)
            * np.sqrt((1000.0 ** 2 + 107.7 ** 2) * (1000.0 ** 2 + 737.9 ** 2))
            * (1000.0 ** 2 + 12194.0 ** 2)
        )
    )
    return np.maximum(db - ref, -200.0)


def perceptual_weight(power_spec: np.ndarray, bin_freqs: np.ndarray,
                      floor: float = POWER_FLOOR) -> np.ndarray:
    """A-weighted log-power spectrogram:
    ``10 log10(power + floor) + A(f)`` per bin."""
    power_spec = np.asarray(power_spec, dtype=np.float64)
    if np.any(power_spec < 0):
        raise ValueError("power spectrogram must be non-negative")
    weights = a_weighting_db(bin_freqs)
    return 10.0 * np.log10(power_spec + floor) + weights[:, None]


# -- Mel filterbank -------------------------------------------------------------


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = 256, n_fft_bins: int = 1025,
                   sr: int = 22050, fmin: float = 0.0,
                   fmax: float | None = None, norm: str = "peak") -> np.ndarray:
    """Triangular Mel filterbank matrix ``[n_mels, n_fft_bins]``.

    Centers are equally spaced on the Mel scale between ``fmin`` and
    ``fmax``; each row has a single contiguous support.  ``norm="peak"``
    scales every row to a maximum of 1; ``norm="area"`` scales rows to
    unit sum.  Rows that contain no FFT bin are a configuration error.
    """
    if fmax is None:
        fmax = sr / 2.0
    if not fmin < fmax <= sr / 2.0:
        raise ValueError(f"need fmin < fmax <= sr/2, got ({fmin}, {fmax})")
    window = (n_fft_bins - 1) * 2
    bin_freqs = np.arange(n_fft_bins) * (sr / window)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, n_fft_bins))
    for m in range(n_mels):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_freqs - left) / (center - left)
        down = (right - bin_freqs) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    peaks = fb.max(axis=1)
    empty = np.where(peaks == 0.0)[0]
    if empty.size:
        raise ValueError(
            f"{n_mels} mel bins is too many for {n_fft_bins} FFT bins: "
            f"empty filter rows {empty.tolist()}"
        )
    if norm == "peak":
        fb /= peaks[:, None]
    elif norm == "area":
        fb /= fb.sum(axis=1, keepdims=True)
    elif norm != "none":
        raise ValueError(f"unknown filterbank norm {norm!r}")
    return fb


# -- full pipeline ---------------------------------------------------------------


@dataclass(frozen=True)
class PipelineSettings:
    """Configuration of the WAV-to-spectrogram path."""

    sample_rate: int = 22050
    window: int = 2048
    hop: int = 1536
    n_mels: int = 256
    fmin: float = 0.0
    fmax: float | None = None
    filterbank_norm: str = "peak"
    dtype: type = np.float32


def spectrogram_pipeline(clip: AudioClip, settings: PipelineSettings = PipelineSettings(),
                         label: int | None = None,
                         source_id: str = "") -> SpectrogramClip:
    """Run the full deterministic pipeline on one clip.

    Each channel is processed independently; mono input is duplicated so
    the output always has two planes.
    """
    clip = resample(clip, settings.sample_rate)
    samples = clip.samples
    if samples.shape[0] == 1:
        samples = np.vstack([samples, samples])
    fb = mel_filterbank(
        settings.n_mels, settings.window // 2 + 1, settings.sample_rate,
        settings.fmin, settings.fmax, settings.filterbank_norm,
    )
    bin_freqs = stft_bin_frequencies(settings.window, settings.sample_rate)
    planes = []
    for channel in samples:
        spec = stft(channel, window=settings.window, hop=settings.hop)
        power = np.abs(spec) ** 2
        weighted = perceptual_weight(power, bin_freqs)
        planes.append(fb @ weighted)
    values = np.stack(planes).astype(settings.dtype)
    return SpectrogramClip(values=values, label=label, source_id=source_id)


# -- normalization ----------------------------------------------------------------


def _moments(arrays: list[np.ndarray]):
    """Per (channel, mel) mean/std over all frames of all clips."""
    total = np.zeros(arrays[0].shape[:2], dtype=np.float64)
    total_sq = np.zeros_like(total)
    count = 0
    for values in arrays:
        total += values.sum(axis=2, dtype=np.float64)
        total_sq += (values.astype(np.float64) ** 2).sum(axis=2)
        count += values.shape[2]
    mean = total / count
    var = np.maximum(total_sq / count - mean ** 2, 0.0)
    return mean, np.sqrt(var)


def fit_norm(clips: list[SpectrogramClip]) -> NormStats:
    """Fit per (channel, mel-bin) statistics on a training corpus; the
    standard deviation is floored at ``STD_FLOOR``."""
    if len(clips) < 2:
        raise ValueError(f"need at least 2 clips to fit, got {len(clips)}")
    mean, std = _moments([c.values for c in clips])
    return NormStats(mean=mean, std=np.maximum(std, STD_FLOOR))


def apply_norm(clip: SpectrogramClip, stats: NormStats) -> SpectrogramClip:
    """Standardize one clip with previously fitted statistics."""
    values = (clip.values - stats.mean[:, :, None]) / stats.std[:, :, None]
    return SpectrogramClip(
        values=values.astype(clip.values.dtype),
        label=clip.label,
        source_id=clip.source_id,
    )

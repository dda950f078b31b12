"""On-disk formats: tensor files, dataset manifests, and checkpoints.

Tensor file layout (little-endian throughout):

    bytes 0-3   magic ``b"RFT1"``
    byte  4     dtype code (1 = float32, 2 = float64)
    bytes 5-36  four int64 dimensions [d0, d1, d2, d3]
    rest        raw values, C order

Checkpoint layout:

    bytes 0-7   magic ``b"RFCK0001"``
    int64       length of the architecture text, then that text (UTF-8)
    int64       number of named arrays; per array: int16 name length,
                name (UTF-8), then one tensor record as above
    final 32 bytes: SHA-256 of everything before them
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .arch import NetworkSpec, parse_spec, serialize_spec
from .audio import NormStats, SpectrogramClip
from .network import Network

TENSOR_MAGIC = b"RFT1"
CHECKPOINT_MAGIC = b"RFCK0001"

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class FileFormatError(ValueError):
    """Corrupt or unsupported on-disk data."""


def _tensor_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype not in _CODES_BY_KIND:
        array = array.astype(np.float64)
    code = _CODES_BY_KIND[array.dtype]
    dims = list(array.shape) + [1] * (4 - array.ndim)
    if array.ndim > 4:
        raise ValueError(f"tensors are at most 4-D, got shape {array.shape}")
    header = TENSOR_MAGIC + struct.pack("<B", code) + struct.pack("<4q", *dims)
    return header + np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes()


def _tensor_from(buffer: bytes, offset: int = 0):
    """Parse one tensor record; returns (array, next_offset)."""
    if buffer[offset : offset + 4] != TENSOR_MAGIC:
        raise FileFormatError("bad tensor magic")
    (code,) = struct.unpack_from("<B", buffer, offset + 4)
    if code not in _DTYPE_CODES:
        raise FileFormatError(f"unknown dtype code {code}")
    dims = struct.unpack_from("<4q", buffer, offset + 5)
    if any(d < 0 for d in dims):
        raise FileFormatError(f"negative dimension in {dims}")
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims))
    start = offset + 4 + 1 + 32
    end = start + count * dtype.itemsize
    if end > len(buffer):
        raise FileFormatError("truncated tensor data")
    array = np.frombuffer(buffer[start:end], dtype=dtype).reshape(dims).copy()
    return array, end


def write_tensor(path, array: np.ndarray) -> None:
    Path(path).write_bytes(_tensor_bytes(array))


def read_tensor(path) -> np.ndarray:
    buffer = Path(path).read_bytes()
    array, end = _tensor_from(buffer)
    if end != len(buffer):
        raise FileFormatError(f"{path}: {len(buffer) - end} trailing bytes")
    return array


# -- dataset directories ------------------------------------------------------

MANIFEST_NAME = "manifest.tsv"


def save_dataset(directory, clips: list[SpectrogramClip]) -> None:
    """Write one tensor file per clip plus a tab-separated manifest
    (filename, label, frame count, source id)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, clip in enumerate(clips):
        name = f"clip_{i:05d}.rft"
        write_tensor(directory / name, clip.values)
        label = -1 if clip.label is None else clip.label
        lines.append(f"{name}\t{label}\t{clip.frames}\t{clip.source_id}")
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n")


def load_dataset(directory) -> list[SpectrogramClip]:
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.exists():
        raise FileFormatError(f"no {MANIFEST_NAME} in {directory}")
    clips = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise FileFormatError(
                f"{manifest}:{lineno}: expected 4 tab-separated fields"
            )
        name, label_s, frames_s, source_id = parts
        values = read_tensor(directory / name)
        values = values.reshape(values.shape[:3])
        label = int(label_s)
        clip = SpectrogramClip(
            values=values,
            label=None if label < 0 else label,
            source_id=source_id,
        )
        if clip.frames != int(frames_s):
            raise FileFormatError(
                f"{manifest}:{lineno}: frame count {int(frames_s)} does not "
                f"match tensor ({clip.frames})"
            )
        clips.append(clip)
    if not clips:
        raise FileFormatError(f"{directory}: empty dataset")
    return clips


NORM_MEAN_NAME = "norm_mean.rft"
NORM_STD_NAME = "norm_std.rft"


def save_norm_stats(directory, stats: NormStats) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(directory / NORM_MEAN_NAME, stats.mean)
    write_tensor(directory / NORM_STD_NAME, stats.std)


def load_norm_stats(directory) -> NormStats:
    directory = Path(directory)
    mean = read_tensor(directory / NORM_MEAN_NAME)
    std = read_tensor(directory / NORM_STD_NAME)
    return NormStats(mean=mean.reshape(mean.shape[:2]), std=std.reshape(std.shape[:2]))


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(path, net: Network) -> None:
    """Serialize spec text plus all state arrays, with a trailing SHA-256."""
    parts = [CHECKPOINT_MAGIC]
    spec_text = serialize_spec(net.spec).encode()
    parts.append(struct.pack("<q", len(spec_text)))
    parts.append(spec_text)
    state = net.state_dict()
    parts.append(struct.pack("<q", len(state)))
    for name, array in state.items():
        encoded = name.encode()
        parts.append(struct.pack("<h", len(encoded)))
        parts.append(encoded)
        parts.append(_tensor_bytes(array))
    payload = b"".join(parts)
    digest = hashlib.sha256(payload).digest()
    Path(path).write_bytes(payload + digest)


def load_checkpoint(path) -> Network:
    """Restore a network in eval mode; verifies the content checksum."""
    buffer = Path(path).read_bytes()
    if len(buffer) < len(CHECKPOINT_MAGIC) + 32:
        raise FileFormatError(f"{path}: truncated checkpoint")
    payload, digest = buffer[:-32], buffer[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise FileFormatError(f"{path}: checksum mismatch")
    if payload[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FileFormatError(f"{path}: bad checkpoint magic")
    offset = len(CHECKPOINT_MAGIC)
    (spec_len,) = struct.unpack_from("<q", payload, offset)
    offset += 8
    spec = parse_spec(payload[offset : offset + spec_len].decode())
    offset += spec_len
    (n_arrays,) = struct.unpack_from("<q", payload, offset)
    offset += 8
    state = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<h", payload, offset)
        offset += 2
        name = payload[offset : offset + name_len].decode()
        offset += name_len
        array, offset = _tensor_from(payload, offset)
        state[name] = array
    dtype = next(iter(state.values())).dtype if state else np.float64
    net = Network(spec, seed=0, dtype=dtype)
    net.load_state_dict({k: v.reshape(net.state_dict()[k].shape)
                         for k, v in state.items()})
    net.set_mode("eval")
    return net


def checkpoint_spec(path) -> NetworkSpec:
    """Read just the architecture description from a checkpoint."""
    buffer = Path(path).read_bytes()
    offset = len(CHECKPOINT_MAGIC)
    (spec_len,) = struct.unpack_from("<q", buffer, offset)
    offset += 8
    return parse_spec(buffer[offset : offset + spec_len].decode())

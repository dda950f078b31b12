"""Differentiable operators for the network family, with exact hand-written
backward passes.

Every operator follows the ``(out, cache) = op_forward(...)`` /
``grads = op_backward(dout, cache)`` convention.  Tensors are dense numpy
arrays of shape ``[batch, channel, frequency, time]``; operators preserve
the input dtype (tests run in float64, training defaults to float32).

Convolution has two implementations: :func:`conv2d_forward` (im2col plus
matmul, the production path) and :func:`conv2d_direct` (plain loops, the
oracle the production path is validated against).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are inconsistent or produce an empty output."""


@dataclass
class ConvParams:
    """Convolution weights ``[out_ch, in_ch, kf, kt]`` and optional bias
    (absent when the convolution is followed by batchnorm)."""

    weights: np.ndarray
    bias: np.ndarray | None = None


@dataclass
class BnParams:
    """Batchnorm scale/shift plus running statistics (mutated in train mode)."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def for_channels(cls, channels: int, dtype=np.float64) -> "BnParams":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


def _check_4d(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D [batch, channel, f, t], got {x.shape}")


def _pad_spatial(x: np.ndarray, pf: int, pt: int) -> np.ndarray:
    if pf == 0 and pt == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pf, pf), (pt, pt)))


def conv2d_out_shape(
    in_shape: tuple[int, int], kernel: tuple[int, int],
    stride: tuple[int, int], padding: tuple[int, int],
) -> tuple[int, int]:
    fo = (in_shape[0] + 2 * padding[0] - kernel[0]) // stride[0] + 1
    to = (in_shape[1] + 2 * padding[1] - kernel[1]) // stride[1] + 1
    return fo, to


def conv2d_forward(x, w, stride=(1, 1), padding=(0, 0), bias=None):
    """Cross-correlation of ``x`` [B, C, F, T] with ``w`` [Co, C, kf, kt].

    Pointwise (1x1, stride 1, no padding) convolutions skip the im2col
    step and contract over channels directly.
    """
    _check_4d(x)
    if w.ndim != 4 or w.shape[1] != x.shape[1]:
        raise ShapeError(
            f"weight shape {w.shape} does not match input channels {x.shape[1]}"
        )
    co, ci, kf, kt = w.shape
    if (kf, kt) == (1, 1) and stride == (1, 1) and padding == (0, 0):
        out = np.tensordot(w[:, :, 0, 0], x, axes=([1], [1])).transpose(1, 0, 2, 3)
        if bias is not None:
            out = out + bias.reshape(1, -1, 1, 1)
        cache = (None, x, w, stride, padding, bias is not None)
        return np.ascontiguousarray(out), cache
    sf, st = stride
    fo, to = conv2d_out_shape(x.shape[2:], (kf, kt), stride, padding)
    if fo < 1 or to < 1:
        raise ShapeError(
            f"zero-sized spatial output for input {x.shape[2:]}, kernel "
            f"({kf}, {kt}), stride {stride}, padding {padding}"
        )
    xp = _pad_spatial(x, *padding)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kf, kt), axis=(2, 3))
    windows = windows[:, :, ::sf, ::st]  # [B, C, Fo, To, kf, kt]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(x.shape[0], fo, to, ci * kf * kt)
    out = cols @ w.reshape(co, -1).T  # [B, Fo, To, Co]
    if bias is not None:
        out = out + bias
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    cache = (cols, x.shape, w, stride, padding, bias is not None)
    return out, cache


def conv2d_backward(dout, cache):
    """Gradients of :func:`conv2d_forward`: returns (dx, dw, db); db is
    None when the forward had no bias."""
    cols, x_or_shape, w, stride, padding, has_bias = cache
    co, ci, kf, kt = w.shape
    if cols is None:  # pointwise fast path; cache holds x itself
        x = x_or_shape
        dw = np.tensordot(dout, x, axes=([0, 2, 3], [0, 2, 3]))
        dx = np.tensordot(w[:, :, 0, 0], dout, axes=([0], [1])).transpose(1, 0, 2, 3)
        db = dout.sum(axis=(0, 2, 3)) if has_bias else None
        return dx, dw.reshape(w.shape), db
    x_shape = x_or_shape
    sf, st = stride
    pf, pt = padding
    b, _, fo, to = dout.shape
    dout_cols = dout.transpose(0, 2, 3, 1).reshape(-1, co)  # [B*Fo*To, Co]
    dw = (dout_cols.T @ cols.reshape(-1, ci * kf * kt)).reshape(w.shape)
    db = dout_cols.sum(axis=0) if has_bias else None
    dcols = (dout_cols @ w.reshape(co, -1)).reshape(b, fo, to, ci, kf, kt)
    dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # [B, C, kf, kt, Fo, To]
    dxp = np.zeros(
        (b, ci, x_shape[2] + 2 * pf, x_shape[3] + 2 * pt), dtype=dout.dtype
    )
    for i in range(kf):
        for j in range(kt):
            dxp[:, :, i : i + sf * fo : sf, j : j + st * to : st] += dcols[:, :, i, j]
    if pf == 0 and pt == 0:
        return dxp, dw, db
    return dxp[:, :, pf : pf + x_shape[2], pt : pt + x_shape[3]], dw, db


def conv2d_direct(x, w, stride=(1, 1), padding=(0, 0), bias=None):
    """Loop-based convolution oracle; same contract as the forward of
    :func:`conv2d_forward`, returns the output only."""
    _check_4d(x)
    co, ci, kf, kt = w.shape
    if ci != x.shape[1]:
        raise ShapeError("weight/input channel mismatch")
    sf, st = stride
    fo, to = conv2d_out_shape(x.shape[2:], (kf, kt), stride, padding)
    if fo < 1 or to < 1:
        raise ShapeError("zero-sized spatial output")
    xp = _pad_spatial(x, *padding)
    out = np.zeros((x.shape[0], co, fo, to), dtype=x.dtype)
    for o in range(co):
        for fi in range(fo):
            for ti in range(to):
                patch = xp[:, :, fi * sf : fi * sf + kf, ti * st : ti * st + kt]
                out[:, o, fi, ti] = np.sum(patch * w[o], axis=(1, 2, 3))
            if bias is not None:
                out[:, o] += bias[o]
    return out


def batchnorm_forward(x, p: BnParams, mode: str = "train"):
    """Per-channel normalization over (batch, frequency, time).

    Train mode uses batch statistics and updates the running statistics in
    place; eval mode uses the stored running statistics.
    """
    _check_4d(x)
    if x.shape[1] != p.gamma.shape[0]:
        raise ShapeError(
            f"channel dim {x.shape[1]} does not match batchnorm width "
            f"{p.gamma.shape[0]}"
        )
    gamma = p.gamma.reshape(1, -1, 1, 1)
    beta = p.beta.reshape(1, -1, 1, 1)
    if mode == "train":
        n = x.shape[0] * x.shape[2] * x.shape[3]
        if n < 2:
            raise ShapeError(
                "train-mode batchnorm needs at least 2 values per channel"
            )
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = p.momentum
        p.running_mean[...] = (1 - m) * p.running_mean + m * mean
        p.running_var[...] = (1 - m) * p.running_var + m * var
    else:
        mean = p.running_mean.astype(x.dtype)
        var = p.running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    out = gamma * xhat + beta
    cache = (xhat, inv_std, p.gamma, mode)
    return out, cache


def batchnorm_backward(dout, cache):
    """Gradients of :func:`batchnorm_forward`: (dx, dgamma, dbeta)."""
    xhat, inv_std, gamma, mode = cache
    dgamma = np.sum(dout * xhat, axis=(0, 2, 3))
    dbeta = np.sum(dout, axis=(0, 2, 3))
    dxhat = dout * gamma.reshape(1, -1, 1, 1)
    inv = inv_std.reshape(1, -1, 1, 1)
    if mode == "train":
        n = dout.shape[0] * dout.shape[2] * dout.shape[3]
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (inv / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    else:
        dx = dxhat * inv
    return dx, dgamma, dbeta


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, (x > 0)


def relu_backward(dout, cache):
    return dout * cache


def maxpool2x2_forward(x):
    """2x2/stride-2 max pooling.  Odd spatial extents are truncated (the
    trailing row/column is dropped); an extent of 1 passes through, so the
    output extent is ``max(1, n // 2)``.  Ties route to the first maximal
    index, which makes the backward pass deterministic.
    """
    _check_4d(x)
    b, c, f, t = x.shape
    kf = 2 if f >= 2 else 1
    kt = 2 if t >= 2 else 1
    fo, to = max(1, f // 2), max(1, t // 2)
    xc = x[:, :, : fo * kf, : to * kt]
    win = xc.reshape(b, c, fo, kf, to, kt).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(b, c, fo, to, kf * kt)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    cache = (idx, x.shape, (kf, kt))
    return out, cache


def maxpool2x2_backward(dout, cache):
    idx, x_shape, (kf, kt) = cache
    b, c, f, t = x_shape
    fo, to = dout.shape[2], dout.shape[3]
    dwin = np.zeros((b, c, fo, to, kf * kt), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :, : fo * kf, : to * kt] = (
        dwin.reshape(b, c, fo, to, kf, kt)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, fo * kf, to * kt)
    )
    return dx


def avgpool2x2_forward(x):
    """2x2/stride-2 average pooling with the same extent rules as
    :func:`maxpool2x2_forward`."""
    _check_4d(x)
    b, c, f, t = x.shape
    kf = 2 if f >= 2 else 1
    kt = 2 if t >= 2 else 1
    fo, to = max(1, f // 2), max(1, t // 2)
    xc = x[:, :, : fo * kf, : to * kt]
    win = xc.reshape(b, c, fo, kf, to, kt)
    out = win.mean(axis=(3, 5))
    cache = (x.shape, (kf, kt))
    return out, cache


def avgpool2x2_backward(dout, cache):
    x_shape, (kf, kt) = cache
    b, c, f, t = x_shape
    fo, to = dout.shape[2], dout.shape[3]
    dx = np.zeros(x_shape, dtype=dout.dtype)
    spread = np.repeat(np.repeat(dout, kf, axis=2), kt, axis=3) / (kf * kt)
    dx[:, :, : fo * kf, : to * kt] = spread
    return dx


def global_avg_pool_forward(x):
    _check_4d(x)
    out = x.mean(axis=(2, 3), keepdims=True)
    return out, x.shape


def global_avg_pool_backward(dout, cache):
    x_shape = cache
    scale = x_shape[2] * x_shape[3]
    return np.broadcast_to(dout / scale, x_shape).astype(dout.dtype, copy=True)


def linear_forward(x, w, b):
    """Affine map of ``x`` [B, D] with ``w`` [D, K] and bias [K]."""
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear shapes {x.shape} x {w.shape} do not align")
    out = x @ w + b
    return out, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    dx = dout @ w.T
    dw = x.T @ dout
    db = dout.sum(axis=0)
    return dx, dw, db


def freq_channel_values(n_bins: int, mode: str = "fraction", dtype=np.float64):
    """Per-bin frequency encoding: ``f / F`` in fraction mode, or
    ``2f/(F-1) - 1`` in centered mode (-1 = lowest bin, +1 = highest)."""
    f = np.arange(n_bins, dtype=dtype)
    if mode == "fraction":
        return f / n_bins
    if mode == "centered":
        if n_bins == 1:
            return np.zeros(1, dtype=dtype)
        return 2.0 * f / (n_bins - 1) - 1.0
    raise ValueError(f"unknown frequency-channel mode {mode!r}")


def freq_concat_forward(x, mode: str = "fraction"):
    """Append one channel encoding each pixel's frequency-bin position;
    the value is constant along batch and time."""
    _check_4d(x)
    b, c, f, t = x.shape
    values = freq_channel_values(f, mode, dtype=x.dtype)
    plane = np.broadcast_to(values.reshape(1, 1, f, 1), (b, 1, f, t))
    out = np.concatenate([x, plane], axis=1)
    return out, c


def freq_concat_backward(dout, cache):
    """The appended channel is not trainable; the original channels pass
    their gradient through unchanged."""
    n_channels = cache
    return np.ascontiguousarray(dout[:, :n_channels])


def shake_shake_forward(a, b, mode: str = "train", rng=None, alpha=None,
                        level: str = "sample"):
    """Combine two branch outputs with random convex coefficients.

    Train mode draws ``alpha ~ Uniform(0, 1)`` (one per sample, or one per
    batch with ``level="batch"``); eval mode averages the branches.  Pass
    ``alpha`` explicitly to pin the coefficient (the backward pass then
    reuses it, making the op an exact adjoint for gradient checks).
    """
    if a.shape != b.shape:
        raise ShapeError(f"branch shapes differ: {a.shape} vs {b.shape}")
    pinned = alpha is not None
    if pinned:
        alpha = np.asarray(alpha, dtype=a.dtype)
    elif mode == "train":
        if level == "batch":
            alpha = a.dtype.type(rng.uniform())
        else:
            alpha = rng.uniform(size=(a.shape[0], 1, 1, 1)).astype(a.dtype)
    else:
        alpha = a.dtype.type(0.5)
    out = alpha * a + (1.0 - alpha) * b
    cache = (alpha, pinned, mode, level, a.shape)
    return out, cache


def shake_shake_backward(dout, cache, rng=None):
    """Backward of :func:`shake_shake_forward`.  In train mode an
    independent ``beta ~ Uniform(0, 1)`` rescales the branch gradients;
    pinned and eval modes reuse the forward coefficient."""
    alpha, pinned, mode, level, shape = cache
    if pinned or mode != "train":
        beta = alpha
    elif level == "batch":
        beta = dout.dtype.type(rng.uniform())
    else:
        beta = rng.uniform(size=(shape[0], 1, 1, 1)).astype(dout.dtype)
    return beta * dout, (1.0 - beta) * dout


def residual_add(branch, shortcut):
    """Elementwise sum of a residual branch and its shortcut."""
    if branch.shape != shortcut.shape:
        raise ShapeError(
            f"residual shapes differ: {branch.shape} vs {shortcut.shape}"
        )
    return branch + shortcut

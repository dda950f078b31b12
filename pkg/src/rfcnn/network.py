"""Executable networks assembled from a :class:`~rfcnn.arch.NetworkSpec`.

A :class:`Network` owns its parameters, caches activations on forward, and
produces exact gradients for every parameter on backward.  Blocks come in
four flavors:

* plain:      conv-BN-ReLU-conv-BN branch, post-sum ReLU
* freqaware:  plain with a frequency channel concatenated before each conv
* preact:     BN-ReLU-conv-BN-ReLU-conv branch, no post-sum activation
* shakeshake: two pre-activation branches combined with random convex
              coefficients (independently re-drawn in the backward pass)

Projection shortcuts (1x1 conv + BN) appear where the channel width grows;
pooling sits between blocks, so shortcuts never cross a stride.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .arch import NetworkSpec

_POOL_FORWARD = {
    "max": ops.maxpool2x2_forward,
    "avg": ops.avgpool2x2_forward,
}
_POOL_BACKWARD = {
    "max": ops.maxpool2x2_backward,
    "avg": ops.avgpool2x2_backward,
}


class _Conv:
    def __init__(self, name, in_ch, out_ch, kernel, stride, padding, rng, dtype):
        fan_in = in_ch * kernel[0] * kernel[1]
        scale = np.sqrt(2.0 / fan_in)
        w = rng.standard_normal((out_ch, in_ch, *kernel)) * scale
        self.name = name
        self.params = ops.ConvParams(weights=w.astype(dtype))
        self.stride = stride
        self.padding = padding
        self._cache = None

    def forward(self, x, mode):
        out, self._cache = ops.conv2d_forward(
            x, self.params.weights, self.stride, self.padding
        )
        return out

    def backward(self, dout, grads):
        dx, dw, _ = ops.conv2d_backward(dout, self._cache)
        grads[self.name + ".w"] = dw
        return dx

    def state(self):
        return {self.name + ".w": self.params.weights}

    def trainable(self):
        return {self.name + ".w": self.params.weights}

    def assign(self, name, value):
        if name.endswith(".w"):
            self.params.weights = value


class _BatchNorm:
    def __init__(self, name, channels, dtype):
        self.name = name
        self.params = ops.BnParams.for_channels(channels, dtype=dtype)
        self._cache = None

    def forward(self, x, mode):
        out, self._cache = ops.batchnorm_forward(x, self.params, mode)
        return out

    def backward(self, dout, grads):
        dx, dgamma, dbeta = ops.batchnorm_backward(dout, self._cache)
        grads[self.name + ".gamma"] = dgamma
        grads[self.name + ".beta"] = dbeta
        return dx

    def state(self):
        p = self.params
        return {
            self.name + ".gamma": p.gamma,
            self.name + ".beta": p.beta,
            self.name + ".running_mean": p.running_mean,
            self.name + ".running_var": p.running_var,
        }

    def trainable(self):
        return {self.name + ".gamma": self.params.gamma,
                self.name + ".beta": self.params.beta}

    def assign(self, name, value):
        attr = name.rsplit(".", 1)[1]
        setattr(self.params, attr, value)


class _ReLU:
    def __init__(self):
        self._cache = None

    def forward(self, x, mode):
        out, self._cache = ops.relu_forward(x)
        return out

    def backward(self, dout, grads):
        return ops.relu_backward(dout, self._cache)


class _FreqConcat:
    def __init__(self, mode):
        self.freq_mode = mode
        self._cache = None

    def forward(self, x, mode):
        out, self._cache = ops.freq_concat_forward(x, self.freq_mode)
        return out

    def backward(self, dout, grads):
        return ops.freq_concat_backward(dout, self._cache)


class _Chain:
    """A straight sequence of layers with caching forward/backward."""

    def __init__(self, layers):
        self.layers = layers

    def forward(self, x, mode):
        for layer in self.layers:
            x = layer.forward(x, mode)
        return x

    def backward(self, dout, grads):
        for layer in reversed(self.layers):
            dout = layer.backward(dout, grads)
        return dout

    def state(self):
        out = {}
        for layer in self.layers:
            if hasattr(layer, "state"):
                out.update(layer.state())
        return out

    def trainable(self):
        out = {}
        for layer in self.layers:
            if hasattr(layer, "trainable"):
                out.update(layer.trainable())
        return out

    def assign(self, name, value):
        for layer in self.layers:
            if hasattr(layer, "state") and name in layer.state():
                layer.assign(name, value)
                return
        raise KeyError(name)


def _conv_branch(name, in_ch, width, kernels, preact, freq_mode, rng, dtype):
    """Branch layers for one block, in plain or pre-activation order."""
    layers = []
    ka, kb = kernels
    if preact:
        layers.append(_BatchNorm(name + ".bn_in", in_ch, dtype))
        layers.append(_ReLU())
    if freq_mode is not None:
        layers.append(_FreqConcat(freq_mode))
    layers.append(
        _Conv(name + ".conv_a", in_ch + (freq_mode is not None), width,
              (ka, ka), (1, 1), ((ka - 1) // 2, (ka - 1) // 2), rng, dtype)
    )
    layers.append(_BatchNorm(name + ".bn_a", width, dtype))
    layers.append(_ReLU())
    if freq_mode is not None:
        layers.append(_FreqConcat(freq_mode))
    layers.append(
        _Conv(name + ".conv_b", width + (freq_mode is not None), width,
              (kb, kb), (1, 1), ((kb - 1) // 2, (kb - 1) // 2), rng, dtype)
    )
    if not preact:
        layers.append(_BatchNorm(name + ".bn_b", width, dtype))
    return _Chain(layers)


class _Block:
    """One residual block (any variant)."""

    def __init__(self, name, block_spec, in_ch, variant, freq_mode, rng, dtype):
        self.name = name
        self.variant = variant
        width = block_spec.width
        kernels = (block_spec.conv_a_kernel, block_spec.conv_b_kernel)
        preact = variant in ("preact", "shakeshake")
        fa_mode = freq_mode if variant == "freqaware" else None
        self.branches = [
            _conv_branch(f"{name}.branch{i}", in_ch, width, kernels,
                         preact, fa_mode, rng, dtype)
            for i in range(2 if variant == "shakeshake" else 1)
        ]
        if in_ch != width:
            self.shortcut = _Chain([
                _Conv(name + ".proj", in_ch, width, (1, 1), (1, 1), (0, 0),
                      rng, dtype),
                _BatchNorm(name + ".proj_bn", width, dtype),
            ])
        else:
            self.shortcut = None
        self.post_relu = _ReLU() if variant in ("plain", "freqaware") else None
        self._shake_cache = None
        self.shake_rng = None       # set by the owning Network
        self.shake_alpha = None     # pin coefficients (gradient checks)
        self.shake_level = "sample"

    def forward(self, x, mode):
        shortcut = x if self.shortcut is None else self.shortcut.forward(x, mode)
        if self.variant == "shakeshake":
            a = self.branches[0].forward(x, mode)
            b = self.branches[1].forward(x, mode)
            residual, self._shake_cache = ops.shake_shake_forward(
                a, b, mode, rng=self.shake_rng, alpha=self.shake_alpha,
                level=self.shake_level,
            )
        else:
            residual = self.branches[0].forward(x, mode)
        out = ops.residual_add(residual, shortcut)
        if self.post_relu is not None:
            out = self.post_relu.forward(out, mode)
        return out

    def backward(self, dout, grads):
        if self.post_relu is not None:
            dout = self.post_relu.backward(dout, grads)
        if self.variant == "shakeshake":
            da, db = ops.shake_shake_backward(
                dout, self._shake_cache, rng=self.shake_rng
            )
            dx = self.branches[0].backward(da, grads)
            dx = dx + self.branches[1].backward(db, grads)
        else:
            dx = self.branches[0].backward(dout, grads)
        if self.shortcut is None:
            dx = dx + dout
        else:
            dx = dx + self.shortcut.backward(dout, grads)
        return dx

    def _parts(self):
        parts = list(self.branches)
        if self.shortcut is not None:
            parts.append(self.shortcut)
        return parts

    def state(self):
        out = {}
        for part in self._parts():
            out.update(part.state())
        return out

    def trainable(self):
        out = {}
        for part in self._parts():
            out.update(part.trainable())
        return out

    def assign(self, name, value):
        for part in self._parts():
            if name in part.state():
                part.assign(name, value)
                return
        raise KeyError(name)


class _Pool:
    def __init__(self, kind):
        self.kind = kind
        self._cache = None

    def forward(self, x, mode):
        out, self._cache = _POOL_FORWARD[self.kind](x)
        return out

    def backward(self, dout, grads):
        return _POOL_BACKWARD[self.kind](dout, self._cache)


class Network:
    """A runnable network: parameters, forward, backward, updates.

    ``dtype`` selects the working precision (float64 for gradient-check
    fidelity, float32 for training speed).  ``pooling`` swaps the 2x2
    max pools for average pools (used by receptive-field measurements).
    Construction is deterministic given ``seed``.

    Forward/backward cache activations on the instance, so an instance
    serves one caller at a time; train-mode state (batchnorm running
    statistics, the shake-shake stream) is single-writer.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0,
                 dtype=np.float64, pooling: str = "max"):
        if pooling not in _POOL_FORWARD:
            raise ValueError(f"unknown pooling kind {pooling!r}")
        self.spec = spec
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.mode = "train"
        rng = np.random.default_rng(seed)
        self._shake_rng = np.random.default_rng(
            np.random.SeedSequence(seed).spawn(1)[0]
        )

        ic = spec.input_conv
        body: list = [
            _Conv("stem", ic.in_channels, ic.out_channels, ic.kernel,
                  ic.stride, ic.padding, rng, self.dtype),
            _BatchNorm("stem_bn", ic.out_channels, self.dtype),
            _ReLU(),
        ]
        self._blocks = []
        prev = ic.out_channels
        for bs in spec.blocks:
            block = _Block(f"block{bs.index}", bs, prev, spec.variant,
                           spec.freq_mode, rng, self.dtype)
            block.shake_rng = self._shake_rng
            self._blocks.append(block)
            body.append(block)
            if bs.pooled:
                body.append(_Pool(pooling))
            prev = bs.width
        if spec.variant in ("preact", "shakeshake"):
            body.append(_BatchNorm("final_bn", prev, self.dtype))
            body.append(_ReLU())
        self._body = _Chain(body)

        head_in = prev
        w = rng.standard_normal((head_in, spec.num_classes)) * np.sqrt(2.0 / head_in)
        self._fc_w = w.astype(self.dtype)
        self._fc_b = np.zeros(spec.num_classes, dtype=self.dtype)
        self._gap_cache = None
        self._fc_cache = None
        self._fmap_shape = None

    # -- modes ------------------------------------------------------------

    def set_mode(self, mode: str) -> None:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        self.mode = mode

    def pin_shake(self, alpha) -> None:
        """Pin the shake coefficients of every block (None to unpin)."""
        for block in self._blocks:
            block.shake_alpha = alpha

    # -- forward / backward ------------------------------------------------

    def forward_features(self, x: np.ndarray) -> np.ndarray:
        """Body forward: input [B, C, F, T] to the last pre-pooling feature
        map [B, C', F', T']."""
        x = np.asarray(x)
        if x.ndim != 4:
            raise ops.ShapeError(f"input must be 4-D, got shape {x.shape}")
        if x.shape[1] != self.spec.in_channels:
            raise ops.ShapeError(
                f"expected {self.spec.in_channels} input channels, "
                f"got {x.shape[1]}"
            )
        x = x.astype(self.dtype, copy=False)
        return self._body.forward(x, self.mode)

    def head_forward(self, fmap: np.ndarray) -> np.ndarray:
        self._fmap_shape = fmap.shape
        pooled, self._gap_cache = ops.global_avg_pool_forward(fmap)
        flat = pooled.reshape(fmap.shape[0], -1)
        logits, self._fc_cache = ops.linear_forward(flat, self._fc_w, self._fc_b)
        return logits

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Logits [B, num_classes] for a batch."""
        return self.head_forward(self.forward_features(x))

    def backward_features(self, dfmap: np.ndarray) -> np.ndarray:
        """Body backward from a feature-map gradient; returns the input
        gradient and fills the parameter gradients."""
        self._grads: dict[str, np.ndarray] = {}
        return self._body.backward(dfmap, self._grads)

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Full backward from a logits gradient; returns parameter
        gradients keyed like :meth:`parameters`."""
        if self._fc_cache is None:
            raise RuntimeError("backward called before forward")
        dflat, dw, db = ops.linear_backward(dlogits, self._fc_cache)
        dpooled = dflat.reshape(self._fmap_shape[0], self._fmap_shape[1], 1, 1)
        dfmap = ops.global_avg_pool_backward(dpooled, self._gap_cache)
        dx = self.backward_features(dfmap)
        grads = dict(self._grads)
        grads["fc.w"] = dw
        grads["fc.b"] = db
        self._grads = grads
        self._input_grad = dx
        return grads

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities (softmax of logits); eval mode required so
        batchnorm and shake-shake are deterministic."""
        if self.mode != "eval":
            raise RuntimeError("predict_proba requires eval mode")
        logits = self.forward(x)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable parameters, in a stable order."""
        out = self._body.trainable()
        out["fc.w"] = self._fc_w
        out["fc.b"] = self._fc_b
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        """All arrays needed to restore the network (parameters plus
        batchnorm running statistics)."""
        out = self._body.state()
        out["fc.w"] = self._fc_w
        out["fc.b"] = self._fc_b
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(
                f"state mismatch; missing {missing[:3]}, unexpected {extra[:3]}"
            )
        for name, value in state.items():
            value = np.asarray(value, dtype=self.dtype)
            if value.shape != own[name].shape:
                raise ValueError(
                    f"shape mismatch for {name}: {value.shape} vs "
                    f"{own[name].shape}"
                )
            if name == "fc.w":
                self._fc_w = value
            elif name == "fc.b":
                self._fc_b = value
            else:
                self._body.assign(name, value)

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        """Overwrite trainable parameters (running stats untouched)."""
        own = self.parameters()
        for name, value in params.items():
            if name not in own:
                raise KeyError(name)
            if name == "fc.w":
                self._fc_w = value
            elif name == "fc.b":
                self._fc_b = value
            else:
                self._body.assign(name, value)

    def param_count(self) -> int:
        return sum(v.size for v in self.parameters().values())

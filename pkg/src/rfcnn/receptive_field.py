"""Analytic and empirical receptive-field computation.

The analytic side folds the standard recursion ``rf' = rf + (k - 1) * jump,
jump' = jump * stride`` over a network's layer walk.  The empirical side
backpropagates a unit gradient from the spatially central unit of the last
pre-pooling feature map and returns the support of the input gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arch import LayerSpec, NetworkSpec, make_network

# Layer kinds that move the receptive field; everything else is identity.
_SPATIAL_KINDS = ("conv", "maxpool")

# Published maximum receptive fields for rho 0..21 (square, per axis),
# used by the table verification command.
REFERENCE_MAX_RF = (
    23, 31, 39, 55, 71, 87, 103, 135, 167, 199, 231,
    263, 295, 327, 359, 391, 423, 455, 487, 519, 551, 583,
)


@dataclass(frozen=True)
class RfState:
    """Receptive field size and stride product along one axis."""

    rf: int = 1
    jump: int = 1

    def __post_init__(self):
        if self.rf < 1 or self.jump < 1:
            raise ValueError("rf and jump must be >= 1")


def rf_step(state: RfState, layer: LayerSpec, axis: int = 0) -> RfState:
    """Advance the receptive-field state through one layer along ``axis``
    (0 = frequency, 1 = time).  Non-spatial layers are identity."""
    if layer.kind not in _SPATIAL_KINDS:
        return state
    k = layer.kernel[axis]
    s = layer.stride[axis]
    return RfState(rf=state.rf + (k - 1) * state.jump, jump=state.jump * s)


def max_rf(spec: NetworkSpec) -> tuple[int, int]:
    """Maximum receptive field (frequency, time) of the network body over
    the input plane."""
    states = [RfState(), RfState()]
    for layer in spec.layers():
        states = [rf_step(st, layer, axis) for axis, st in enumerate(states)]
    return states[0].rf, states[1].rf


def rf_table(
    rho_min: int = 0,
    rho_max: int = 21,
    variant: str = "plain",
    base_width: int = 128,
) -> list[tuple[int, tuple[int, int]]]:
    """One (rho, max RF) entry per rho in the inclusive range."""
    if not 0 <= rho_min <= rho_max <= 22:
        raise ValueError("need 0 <= rho_min <= rho_max <= 22")
    table = []
    for rho in range(rho_min, rho_max + 1):
        spec = make_network(rho, variant=variant, base_width=base_width)
        table.append((rho, max_rf(spec)))
    return table


def verify_reference_table(network_builder=make_network) -> list[str]:
    """Recompute all 22 reference (rho, max RF) pairs and return one
    mismatch message per offending rho (empty if all match).

    ``network_builder`` is injectable so a deliberately broken builder can
    be verified to fail.
    """
    mismatches = []
    for rho, expected in enumerate(REFERENCE_MAX_RF):
        spec = network_builder(rho, variant="plain", base_width=8)
        rf_f, rf_t = max_rf(spec)
        if (rf_f, rf_t) != (expected, expected):
            mismatches.append(
                f"rho={rho}: computed {rf_f}x{rf_t}, expected {expected}x{expected}"
            )
    return mismatches


# -- geometry: where a unit's receptive field lands on the input ----------


@dataclass(frozen=True)
class _Geometry:
    """RF state plus output extent and RF-center tracking for one axis.

    ``center2`` is twice the input coordinate of the receptive-field
    center of output index 0 (doubled so half-pixel centers stay exact).
    """

    rf: int = 1
    jump: int = 1
    center2: int = 0
    size: int = 0


def _geometry_step(g: _Geometry, layer: LayerSpec, axis: int) -> _Geometry:
    if layer.kind == "conv":
        k, s, p = layer.kernel[axis], layer.stride[axis], layer.padding[axis]
        size = (g.size + 2 * p - k) // s + 1
        if size < 1:
            raise ValueError("spatial extent vanished inside the network")
        return _Geometry(
            rf=g.rf + (k - 1) * g.jump,
            jump=g.jump * s,
            center2=g.center2 + ((k - 1) - 2 * p) * g.jump,
            size=size,
        )
    if layer.kind == "maxpool":
        if g.size == 1:
            # degenerate pooling: the 2x2 window clips to the single pixel
            return g
        k, s = layer.kernel[axis], layer.stride[axis]
        return _Geometry(
            rf=g.rf + (k - 1) * g.jump,
            jump=g.jump * s,
            center2=g.center2 + (k - 1) * g.jump,
            size=max(1, g.size // s),
        )
    return g


def feature_geometry(
    spec: NetworkSpec, input_shape: tuple[int, int]
) -> tuple[_Geometry, _Geometry]:
    """Fold the geometry walk over the network body (head excluded) for an
    input of spatial shape (frequency, time)."""
    geoms = [
        _Geometry(size=input_shape[0]),
        _Geometry(size=input_shape[1]),
    ]
    for layer in spec.layers():
        if layer.kind in ("globalavgpool", "linear"):
            break
        geoms = [_geometry_step(g, layer, axis) for axis, g in enumerate(geoms)]
    return geoms[0], geoms[1]


def central_rf_box(
    spec: NetworkSpec, input_shape: tuple[int, int]
) -> tuple[int, int, int, int]:
    """Input-pixel box (f_lo, f_hi, t_lo, t_hi), inclusive, covered by the
    maximum receptive field of the spatially central unit of the last
    pre-pooling feature map, clipped to the input extent."""
    bounds = []
    for axis, g in enumerate(feature_geometry(spec, input_shape)):
        center_idx = g.size // 2
        c2 = g.center2 + 2 * center_idx * g.jump
        lo2 = c2 - (g.rf - 1)
        hi2 = c2 + (g.rf - 1)
        lo = max(0, -(-lo2 // 2))  # ceil(lo2 / 2)
        hi = min(input_shape[axis] - 1, hi2 // 2)
        bounds.append((lo, hi))
    return bounds[0][0], bounds[0][1], bounds[1][0], bounds[1][1]


def empirical_rf(net, probe: np.ndarray) -> np.ndarray:
    """Measure the gradient support of the central output unit.

    Runs the network body in eval mode on ``probe`` (shape
    ``[1, channels, F, T]``), seeds a unit gradient at the spatially
    central position of the last pre-pooling feature map, and returns the
    boolean (F, T) mask of input pixels with exactly nonzero gradient
    magnitude (any input channel).  Among the channels at the central
    position, the most active one is probed; a relu-dead unit would yield
    an empty, uninformative mask.
    """
    probe = np.asarray(probe, dtype=np.float64)
    if probe.ndim != 4 or probe.shape[0] != 1:
        raise ValueError(f"probe must have shape [1, C, F, T], got {probe.shape}")
    previous_mode = net.mode
    net.set_mode("eval")
    try:
        fmap = net.forward_features(probe)
        f_c, t_c = fmap.shape[2] // 2, fmap.shape[3] // 2
        channel = int(np.abs(fmap[0, :, f_c, t_c]).argmax())
        seed = np.zeros_like(fmap)
        seed[0, channel, f_c, t_c] = 1.0
        grad_in = net.backward_features(seed)
    finally:
        net.set_mode(previous_mode)
    return np.abs(grad_in[0]).max(axis=0) > 0.0

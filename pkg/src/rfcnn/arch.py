"""Declarative description of the receptive-field-controlled ResNet family.

A network in this family is fully determined by a small set of knobs: the
``rho`` hyper-parameter (how many of the 22 controllable residual-block
kernels are 3x3 instead of 1x1), the block variant (plain, pre-activation,
shake-shake, or frequency-aware), the base channel width, the number of
input channels and the number of classes.  This module turns those knobs
into an explicit, serializable :class:`NetworkSpec`.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass

N_CONTROLLED_KERNELS = 22
RHO_MAX = 22
N_BLOCKS = 12
POOLED_BLOCKS = (1, 2, 4)

VARIANTS = ("plain", "preact", "shakeshake", "freqaware")
FREQ_MODES = ("fraction", "centered")

# Layer kinds understood by the receptive-field calculus and the display
# code.  Only "conv" and "maxpool" move the receptive field.
LAYER_KINDS = (
    "conv",
    "maxpool",
    "batchnorm",
    "relu",
    "freqconcat",
    "globalavgpool",
    "linear",
)


class SpecError(ValueError):
    """Invalid architecture description (bad rho, kernel, or field value)."""


class SpecParseError(SpecError):
    """Malformed spec text; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Rho:
    """The receptive-field hyper-parameter: number of 3x3 kernels among the
    22 controllable residual-block convolutions."""

    value: int

    def __post_init__(self):
        if isinstance(self.value, bool):
            raise SpecError(f"rho must be an integer, got {self.value!r}")
        try:
            object.__setattr__(self, "value", operator.index(self.value))
        except TypeError:
            raise SpecError(
                f"rho must be an integer, got {self.value!r}"
            ) from None
        if not 0 <= self.value <= RHO_MAX:
            raise SpecError(
                f"rho must be in [0, {RHO_MAX}], got {self.value}"
            )


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the flattened network description.

    ``kernel``, ``stride`` and ``padding`` are (frequency, time) pairs and
    are meaningful only for spatial kinds; non-spatial kinds keep the
    defaults.
    """

    kind: str
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    in_channels: int = 0
    out_channels: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv", "maxpool"):
            if min(self.kernel) < 1 or min(self.stride) < 1:
                raise SpecError("kernel and stride must be positive")
            if min(self.padding) < 0:
                raise SpecError("padding must be non-negative")


@dataclass(frozen=True)
class BlockSpec:
    """One residual block: two convolutions, a width, and optional pooling
    after the block."""

    index: int
    conv_a_kernel: int
    conv_b_kernel: int
    width: int
    pooled: bool
    variant: str

    def __post_init__(self):
        if not 1 <= self.index <= N_BLOCKS:
            raise SpecError(f"block index must be in [1, {N_BLOCKS}]")
        for k in (self.conv_a_kernel, self.conv_b_kernel):
            if k not in (1, 3):
                raise SpecError(f"block kernels must be 1 or 3, got {k}")
        if self.index == 1 and (self.conv_a_kernel, self.conv_b_kernel) != (3, 1):
            raise SpecError("block 1 is fixed to kernels (3, 1)")
        if self.width < 1:
            raise SpecError("block width must be positive")
        if self.variant not in VARIANTS:
            raise SpecError(f"unknown variant {self.variant!r}")


@dataclass(frozen=True)
class NetworkSpec:
    """Machine-readable description of one concrete network.

    ``block_kernels`` holds the 22 controllable kernel sizes feeding blocks
    2..12 (two per block).  Block 1 is fixed to (3, 1) and is not part of
    the controllable set.
    """

    input_conv: LayerSpec
    blocks: tuple[BlockSpec, ...]
    head: tuple[LayerSpec, ...]
    num_classes: int
    in_channels: int
    base_width: int
    freq_aware: bool
    block_kernels: tuple[int, ...]
    variant: str
    freq_mode: str = "fraction"

    def __post_init__(self):
        if len(self.block_kernels) != N_CONTROLLED_KERNELS:
            raise SpecError(
                f"kernels must have exactly {N_CONTROLLED_KERNELS} entries, "
                f"got {len(self.block_kernels)}"
            )
        if any(k not in (1, 3) for k in self.block_kernels):
            raise SpecError("kernel entries must be 1 or 3")
        if len(self.blocks) != N_BLOCKS:
            raise SpecError(f"expected {N_BLOCKS} blocks")
        if self.num_classes < 2:
            raise SpecError("num_classes must be >= 2")
        if self.freq_mode not in FREQ_MODES:
            raise SpecError(f"unknown freq_mode {self.freq_mode!r}")

    def layers(self) -> tuple[LayerSpec, ...]:
        """Flattened layer sequence (residual wiring not represented).

        This is the walk used for receptive-field computation and for
        display; batchnorm/relu/freqconcat entries are identity for the RF
        calculus.
        """
        out: list[LayerSpec] = [self.input_conv]
        out.append(LayerSpec("batchnorm"))
        out.append(LayerSpec("relu"))
        prev_width = self.input_conv.out_channels
        for block in self.blocks:
            for k, in_ch in (
                (block.conv_a_kernel, prev_width),
                (block.conv_b_kernel, block.width),
            ):
                if self.freq_aware:
                    out.append(LayerSpec("freqconcat"))
                    in_ch = in_ch + 1
                out.append(
                    LayerSpec(
                        "conv",
                        kernel=(k, k),
                        stride=(1, 1),
                        padding=((k - 1) // 2, (k - 1) // 2),
                        in_channels=in_ch,
                        out_channels=block.width,
                    )
                )
                out.append(LayerSpec("batchnorm"))
                out.append(LayerSpec("relu"))
            if block.pooled:
                out.append(
                    LayerSpec("maxpool", kernel=(2, 2), stride=(2, 2))
                )
            prev_width = block.width
        out.extend(self.head)
        return tuple(out)


def rho_to_kernels(rho: Rho | int) -> list[int]:
    """Map rho to the 22 controllable kernel sizes: entry k (1-based) is 3
    for k <= rho and 1 otherwise."""
    if not isinstance(rho, Rho):
        rho = Rho(rho)
    return [3 if k <= rho.value else 1 for k in range(1, N_CONTROLLED_KERNELS + 1)]


def _width_for_block(index: int, base_width: int) -> int:
    if index <= 4:
        return base_width
    if index <= 8:
        return 2 * base_width
    return 4 * base_width


def _build_spec(
    kernels: list[int] | tuple[int, ...],
    variant: str,
    num_classes: int,
    base_width: int,
    in_channels: int,
    freq_mode: str,
) -> NetworkSpec:
    if variant not in VARIANTS:
        raise SpecError(
            f"unknown variant {variant!r}; expected one of {VARIANTS}"
        )
    if base_width < 1:
        raise SpecError("base_width must be >= 1")
    if num_classes < 2:
        raise SpecError("num_classes must be >= 2")
    if in_channels < 1:
        raise SpecError("in_channels must be >= 1")
    freq_aware = variant == "freqaware"
    input_conv = LayerSpec(
        "conv",
        kernel=(5, 5),
        stride=(2, 2),
        padding=(2, 2),
        in_channels=in_channels,
        out_channels=base_width,
    )
    blocks = []
    kernel_iter = iter(kernels)
    for index in range(1, N_BLOCKS + 1):
        if index == 1:
            conv_a, conv_b = 3, 1
        else:
            conv_a, conv_b = next(kernel_iter), next(kernel_iter)
        blocks.append(
            BlockSpec(
                index=index,
                conv_a_kernel=conv_a,
                conv_b_kernel=conv_b,
                width=_width_for_block(index, base_width),
                pooled=index in POOLED_BLOCKS,
                variant=variant,
            )
        )
    top_width = 4 * base_width
    head = (
        LayerSpec("globalavgpool"),
        LayerSpec("linear", in_channels=top_width, out_channels=num_classes),
    )
    return NetworkSpec(
        input_conv=input_conv,
        blocks=tuple(blocks),
        head=head,
        num_classes=num_classes,
        in_channels=in_channels,
        base_width=base_width,
        freq_aware=freq_aware,
        block_kernels=tuple(kernels),
        variant=variant,
        freq_mode=freq_mode,
    )


def make_network(
    rho: Rho | int,
    variant: str = "plain",
    num_classes: int = 10,
    base_width: int = 128,
    in_channels: int = 2,
    freq_mode: str = "fraction",
) -> NetworkSpec:
    """Build the concrete network description for one rho value.

    The layout is: 5x5/stride-2 input convolution, 12 residual blocks with
    2x2 max pooling after blocks 1, 2 and 4, widths (w, 2w, 4w) for block
    groups 1-4 / 5-8 / 9-12, and a global-average-pool + linear classifier
    head.  For the frequency-aware variant every residual-block convolution
    is preceded by a frequency-channel concat and sees one extra input
    channel; kernels, strides and pooling are unchanged.
    """
    kernels = rho_to_kernels(rho)
    return _build_spec(
        kernels, variant, num_classes, base_width, in_channels, freq_mode
    )


SPEC_HEADER = "rfcnn-arch v1"

_INT_FIELDS = ("num_classes", "in_channels", "base_width")


def serialize_spec(spec: NetworkSpec) -> str:
    """Render a spec as line-oriented text (versioned header, one
    ``key value`` pair per line, kernels as 22 space-separated entries)."""
    lines = [
        SPEC_HEADER,
        f"variant {spec.variant}",
        f"num_classes {spec.num_classes}",
        f"in_channels {spec.in_channels}",
        f"base_width {spec.base_width}",
        f"freq_mode {spec.freq_mode}",
        "kernels " + " ".join(str(k) for k in spec.block_kernels),
    ]
    return "\n".join(lines) + "\n"


def parse_spec(text: str) -> NetworkSpec:
    """Inverse of :func:`serialize_spec`; raises :class:`SpecParseError`
    with a line number on malformed input."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != SPEC_HEADER:
        raise SpecParseError(
            f"missing or unsupported header; expected {SPEC_HEADER!r}", line=1
        )
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise SpecParseError(f"expected 'key value', got {line!r}", lineno)
        key, value = parts
        if key in fields:
            raise SpecParseError(f"duplicate field {key!r}", lineno)
        fields[key] = value
    required = set(_INT_FIELDS) | {"variant", "freq_mode", "kernels"}
    missing = sorted(required - set(fields))
    if missing:
        raise SpecParseError(f"missing fields: {', '.join(missing)}")
    unknown = sorted(set(fields) - required)
    if unknown:
        raise SpecParseError(f"unknown fields: {', '.join(unknown)}")
    ints = {}
    for name in _INT_FIELDS:
        try:
            ints[name] = int(fields[name])
        except ValueError:
            raise SpecParseError(
                f"field {name!r} must be an integer, got {fields[name]!r}"
            ) from None
    tokens = fields["kernels"].split()
    if len(tokens) != N_CONTROLLED_KERNELS:
        raise SpecParseError(
            f"kernels must have exactly {N_CONTROLLED_KERNELS} entries, "
            f"got {len(tokens)}"
        )
    kernels = []
    for tok in tokens:
        try:
            k = int(tok)
        except ValueError:
            raise SpecParseError(
                f"kernels entries must be integers, got {tok!r}"
            ) from None
        if k not in (1, 3):
            raise SpecParseError(f"kernels entries must be 1 or 3, got {k}")
        kernels.append(k)
    try:
        return _build_spec(
            kernels,
            variant=fields["variant"],
            num_classes=ints["num_classes"],
            base_width=ints["base_width"],
            in_channels=ints["in_channels"],
            freq_mode=fields["freq_mode"],
        )
    except SpecError as exc:
        raise SpecParseError(str(exc)) from exc


def format_layout(spec: NetworkSpec, max_rf: tuple[int, int] | None = None) -> str:
    """Human-readable table of the block layout, one row per block."""
    rows = [
        f"input   conv 5x5 stride 2 pad 2   {spec.in_channels} -> {spec.base_width} ch"
    ]
    for b in spec.blocks:
        pool = ", P" if b.pooled else ""
        fa = " +freq" if spec.freq_aware else ""
        rows.append(
            f"RB {b.index:<2}   {b.conv_a_kernel}x{b.conv_a_kernel}, "
            f"{b.conv_b_kernel}x{b.conv_b_kernel}{pool}   {b.width} ch{fa}"
        )
    rows.append(
        f"head    global avg pool, linear {4 * spec.base_width} -> {spec.num_classes}"
    )
    if max_rf is not None:
        rows.append(f"max RF  {max_rf[0]}x{max_rf[1]}")
    return "\n".join(rows)

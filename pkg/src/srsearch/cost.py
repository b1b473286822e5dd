"""Analytic multiply-add accounting for architectures.

One MAC = one multiply-add = 1 FLOP here (no factor of 2).  The key
network-level effect captured: every layer past the upsampling cell runs at
scale^2 times the spatial area, so early upsampling positions cost more.

All counts are exact python ints.  Conventions that the literature leaves
open (calibration convs, UDPB/RCAB internals, degenerate upsample ops on
already-upsampled nodes) are pinned by CostConfig and documented in the
README.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .space import ArchSpec, CellSpec, NormalOp, UpsampleOp, op_from_code

GIGA = 10**9


@dataclass(frozen=True)
class TensorShape:
    channels: int
    height: int
    width: int

    def __post_init__(self):
        if min(self.channels, self.height, self.width) <= 0:
            raise ValueError(f"non-positive tensor shape {self}")

    @property
    def pixels(self) -> int:
        return self.height * self.width

    def scaled(self, s: int) -> "TensorShape":
        return TensorShape(self.channels, self.height * s, self.width * s)

    def with_channels(self, c: int) -> "TensorShape":
        return TensorShape(c, self.height, self.width)


@dataclass(frozen=True)
class CostConfig:
    per_op_channels: int = 8  # 8 during search, 64 for derived models
    scale: int = 2
    # multiply-adds per output element for interpolation resampling
    interp_macs: dict = field(
        default_factory=lambda: {"nearest": 0, "bilinear": 4, "area": 4}
    )
    rcab_reduction: int = 4
    udpb_kernel: int = 6
    udpb_stride: int = 2
    udpb_pad: int = 2
    deconv_kernel: int = 4
    subpixel_kernel: int = 3

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        if self.rcab_reduction < 1:
            raise ValueError("rcab_reduction must be >= 1")


@dataclass
class LayerCost:
    index: int
    kind: str  # stem | normal | upsample | tail
    macs: int
    out_shape: TensorShape


@dataclass
class CostReport:
    total_macs: int
    per_layer: list[LayerCost]

    def total_gmacs(self) -> float:
        return self.total_macs / GIGA

    def to_json(self) -> str:
        return json.dumps(
            {
                "total_macs": self.total_macs,
                "total_gmacs": self.total_gmacs(),
                "per_layer": [
                    {
                        "index": lc.index,
                        "kind": lc.kind,
                        "macs": lc.macs,
                        "out_shape": [lc.out_shape.channels, lc.out_shape.height, lc.out_shape.width],
                    }
                    for lc in self.per_layer
                ],
            },
            indent=2,
        )


def format_gmacs(macs: int) -> str:
    """3 significant digits, e.g. 30.6."""
    return f"{macs / GIGA:.3g}"


# ---------------------------------------------------------------------------
# per-op formulas


def conv_macs(k: int, c_in: int, c_out: int, h_out: int, w_out: int) -> int:
    return k * k * c_in * c_out * h_out * w_out


def op_flops(
    op,
    in_shape: TensorShape,
    out_channels: int,
    effective_scale: int,
    cfg: CostConfig,
) -> int:
    """MACs for one edge op.

    effective_scale > 1 means the op itself performs the resolution jump
    (only upsample ops do); at effective_scale == 1 the upsample ops
    degenerate: interpolation to identity, sub-pixel to a 3x3 conv, deconv
    to a 4x4 conv.
    """
    c_in, h, w = in_shape.channels, in_shape.height, in_shape.width
    s = effective_scale
    h_out, w_out = h * s, w * s

    if isinstance(op, NormalOp):
        if s != 1:
            raise ValueError("normal ops never change resolution")
        if op is NormalOp.IDENTITY:
            return 0
        if op in (NormalOp.DIL_CONV_3X3, NormalOp.DIL_CONV_5X5):
            k = 3 if op is NormalOp.DIL_CONV_3X3 else 5
            # dilation widens the receptive field but not the MAC count
            return conv_macs(k, c_in, out_channels, h, w)
        if op in (NormalOp.SEP_CONV_3X3, NormalOp.SEP_CONV_5X5):
            k = 3 if op is NormalOp.SEP_CONV_3X3 else 5
            depthwise = k * k * c_in * h * w
            pointwise = c_in * out_channels * h * w
            return depthwise + pointwise
        if op is NormalOp.RCAB:
            c = c_in
            convs = 2 * conv_macs(3, c, c, h, w)
            squeeze = max(c // cfg.rcab_reduction, 1)
            attention = c * squeeze + squeeze * c  # two 1x1 convs on the pooled vector
            pool_and_rescale = 2 * c * h * w
            return convs + attention + pool_and_rescale
        if op is NormalOp.UDPB:
            # DBPN-style x2 projection unit: deconv up, conv down, deconv up,
            # all kernel 6 stride 2; the parameter-free pool back to input
            # resolution costs 0 MACs.
            k, su = cfg.udpb_kernel, cfg.udpb_stride
            c = c_in
            up = conv_macs(k, c, c, h * su, w * su)
            down = conv_macs(k, c, c, h, w)
            return 2 * up + down
        raise ValueError(f"unknown normal op {op!r}")

    if isinstance(op, UpsampleOp):
        if s == 1:
            if op in (UpsampleOp.AREA, UpsampleOp.BILINEAR, UpsampleOp.NEAREST):
                return 0  # identity on an already-upsampled node
            if op is UpsampleOp.SUB_PIXEL:
                return conv_macs(cfg.subpixel_kernel, c_in, out_channels, h, w)
            if op is UpsampleOp.DECONV:
                return conv_macs(cfg.deconv_kernel, c_in, out_channels, h, w)
        else:
            if op in (UpsampleOp.AREA, UpsampleOp.BILINEAR, UpsampleOp.NEAREST):
                per_px = cfg.interp_macs[op.value]
                return per_px * c_in * h_out * w_out
            if op is UpsampleOp.SUB_PIXEL:
                # conv at LR emitting out_channels * s^2, then a free shuffle
                return cfg.subpixel_kernel**2 * c_in * (out_channels * s * s) * h * w
            if op is UpsampleOp.DECONV:
                return conv_macs(cfg.deconv_kernel, c_in, out_channels, h_out, w_out)
        raise ValueError(f"unknown upsample op {op!r}")

    raise ValueError(f"unknown op {op!r}")


# ---------------------------------------------------------------------------
# cell and network accounting


def cell_flops(
    cell: CellSpec, in_shape: TensorShape, cfg: CostConfig
) -> tuple[int, TensorShape]:
    """MACs for one cell instance plus its output shape.

    Both cell inputs are assumed to share in_shape.  Each input first passes
    a 1x1 calibration conv down to per_op_channels; edge ops then run at
    that width.  In the upsampling cell, edges leaving an input node perform
    the resolution jump; edges between intermediates run at scale 1 in their
    degenerate forms, so every intermediate lives at the same resolution and
    the concat is well-defined.
    """
    w_op = cfg.per_op_channels
    jump = cfg.scale if cell.kind == "upsample" else 1
    macs = 2 * (in_shape.channels * w_op * in_shape.pixels)  # calibration 1x1 convs

    lr = in_shape.with_channels(w_op)
    for t, src, op_code, _slot in cell.edges():
        op = op_from_code(cell.kind, op_code)
        if cell.kind == "upsample" and src >= 0:
            macs += op_flops(op, lr.scaled(jump), w_op, 1, cfg)
        elif cell.kind == "upsample":
            macs += op_flops(op, lr, w_op, jump, cfg)
        else:
            macs += op_flops(op, lr, w_op, 1, cfg)

    out = TensorShape(len(cell.nodes) * w_op, in_shape.height * jump, in_shape.width * jump)
    return macs, out


def cell_output_channels(cfg: CostConfig, intermediates: int) -> int:
    return intermediates * cfg.per_op_channels


def arch_flops(arch: ArchSpec, input_shape: TensorShape, cfg: CostConfig) -> CostReport:
    """Whole-model MACs: 3x3 stem, L cells, 3x3 tail conv at HR.

    The stem widens the image to the cell width (intermediates *
    per_op_channels) so every cell sees the same input width; the tail maps
    back to the image channel count at the upsampled resolution.
    """
    width = cell_output_channels(cfg, len(arch.normal_cell.nodes))
    layers: list[LayerCost] = []

    stem_macs = conv_macs(3, input_shape.channels, width, input_shape.height, input_shape.width)
    cur = TensorShape(width, input_shape.height, input_shape.width)
    layers.append(LayerCost(0, "stem", stem_macs, cur))

    for i in range(1, arch.depth + 1):
        cell = arch.upsample_cell if i == arch.position else arch.normal_cell
        macs, cur = cell_flops(cell, cur, cfg)
        layers.append(LayerCost(i, cell.kind, macs, cur))

    tail_macs = conv_macs(3, cur.channels, input_shape.channels, cur.height, cur.width)
    out = TensorShape(input_shape.channels, cur.height, cur.width)
    layers.append(LayerCost(arch.depth + 1, "tail", tail_macs, out))

    total = sum(lc.macs for lc in layers)
    return CostReport(total, layers)


def shape_trace(arch: ArchSpec, input_shape: TensorShape, cfg: CostConfig) -> list[TensorShape]:
    """Per-layer output shapes, stem and tail included (length L + 2)."""
    return [lc.out_shape for lc in arch_flops(arch, input_shape, cfg).per_layer]

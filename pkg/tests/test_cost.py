import numpy as np
import pytest

from srsearch.cost import (
    CostConfig,
    TensorShape,
    arch_flops,
    cell_flops,
    format_gmacs,
    op_flops,
    shape_trace,
)
from srsearch.space import ArchSpec, CellSpec, NodeSpec, NormalOp, SpaceConfig, UpsampleOp, random_arch, tokens_to_arch

from conftest import loop_conv, loop_interp, loop_rcab, loop_separable, loop_subpixel, loop_udpb

CFG = CostConfig()
SPACE = SpaceConfig()
SHAPE8 = TensorShape(8, 48, 48)


def zero_arch(space=SPACE):
    return tokens_to_arch([0] * space.token_count, space)


def all_op_arch(normal_op: int, upsample_op: int, position: int, space=SPACE):
    n = CellSpec("normal", tuple(NodeSpec(-2, normal_op, -1, normal_op) for _ in range(space.intermediates)))
    u = CellSpec("upsample", tuple(NodeSpec(-2, upsample_op, -1, upsample_op) for _ in range(space.intermediates)))
    return ArchSpec(n, u, position, space.L)


class TestOpFlops:
    def test_pinned_values(self):
        assert op_flops(NormalOp.DIL_CONV_3X3, SHAPE8, 8, 1, CFG) == 1_327_104
        assert op_flops(NormalOp.IDENTITY, SHAPE8, 8, 1, CFG) == 0
        assert op_flops(UpsampleOp.NEAREST, SHAPE8, 8, 2, CFG) == 0
        assert op_flops(NormalOp.SEP_CONV_3X3, SHAPE8, 8, 1, CFG) == 165_888 + 147_456 == 313_344

    @pytest.mark.parametrize("c_in,c_out,h,w", [(3, 5, 4, 6), (2, 2, 3, 3), (8, 8, 2, 5)])
    def test_against_loop_oracles(self, c_in, c_out, h, w):
        shape = TensorShape(c_in, h, w)
        assert op_flops(NormalOp.DIL_CONV_3X3, shape, c_out, 1, CFG) == loop_conv(3, c_in, c_out, h, w)
        assert op_flops(NormalOp.DIL_CONV_5X5, shape, c_out, 1, CFG) == loop_conv(5, c_in, c_out, h, w)
        assert op_flops(NormalOp.SEP_CONV_3X3, shape, c_out, 1, CFG) == loop_separable(3, c_in, c_out, h, w)
        assert op_flops(NormalOp.SEP_CONV_5X5, shape, c_out, 1, CFG) == loop_separable(5, c_in, c_out, h, w)
        assert op_flops(NormalOp.RCAB, shape, c_in, 1, CFG) == loop_rcab(c_in, h, w, CFG.rcab_reduction)
        assert op_flops(NormalOp.UDPB, shape, c_in, 1, CFG) == loop_udpb(6, c_in, 2, h, w)
        s = CFG.scale
        assert op_flops(UpsampleOp.BILINEAR, shape, c_in, s, CFG) == loop_interp(4, c_in, h * s, w * s)
        assert op_flops(UpsampleOp.AREA, shape, c_in, s, CFG) == loop_interp(4, c_in, h * s, w * s)
        assert op_flops(UpsampleOp.NEAREST, shape, c_in, s, CFG) == 0
        assert op_flops(UpsampleOp.SUB_PIXEL, shape, c_out, s, CFG) == loop_subpixel(3, c_in, c_out, s, h, w)
        assert op_flops(UpsampleOp.DECONV, shape, c_out, s, CFG) == loop_conv(4, c_in, c_out, h * s, w * s)

    def test_degenerate_upsample_ops_at_scale_1(self):
        shape = TensorShape(4, 5, 5)
        assert op_flops(UpsampleOp.BILINEAR, shape, 4, 1, CFG) == 0
        assert op_flops(UpsampleOp.SUB_PIXEL, shape, 4, 1, CFG) == loop_conv(3, 4, 4, 5, 5)
        assert op_flops(UpsampleOp.DECONV, shape, 4, 1, CFG) == loop_conv(4, 4, 4, 5, 5)

    def test_normal_op_rejects_scaling(self):
        with pytest.raises(ValueError):
            op_flops(NormalOp.RCAB, SHAPE8, 8, 2, CFG)


class TestCellFlops:
    def test_all_identity_cell_is_calibration_only(self):
        cell = zero_arch().normal_cell
        macs, out = cell_flops(cell, TensorShape(32, 48, 48), CFG)
        assert macs == 2 * (32 * 8 * 48 * 48) == 1_179_648
        assert out == TensorShape(32, 48, 48)

    def test_upsample_cell_output_shape(self):
        cell = zero_arch().upsample_cell
        _, out = cell_flops(cell, TensorShape(32, 48, 48), CFG)
        assert out == TensorShape(32, 96, 96)

    def test_identity_to_conv_strictly_increases(self):
        base = zero_arch().normal_cell
        nodes = list(base.nodes)
        nodes[0] = NodeSpec(-2, NormalOp.DIL_CONV_3X3.code, -2, 0)
        upgraded = CellSpec("normal", tuple(nodes))
        in_shape = TensorShape(32, 48, 48)
        assert cell_flops(upgraded, in_shape, CFG)[0] > cell_flops(base, in_shape, CFG)[0]

    def test_output_channels(self):
        for width, expect in ((8, 32), (64, 256)):
            cfg = CostConfig(per_op_channels=width)
            _, out = cell_flops(zero_arch().normal_cell, TensorShape(16, 10, 10), cfg)
            assert out.channels == 4 * width == expect


class TestArchFlops:
    def test_total_is_sum_of_layers(self, rng):
        for _ in range(50):
            arch = random_arch(SPACE, rng)
            rep = arch_flops(arch, TensorShape(3, 48, 48), CFG)
            assert rep.total_macs == sum(lc.macs for lc in rep.per_layer)
            assert len(rep.per_layer) == SPACE.L + 2

    def test_early_position_costs_more(self):
        early = all_op_arch(NormalOp.SEP_CONV_3X3.code, 0, 1)
        late = all_op_arch(NormalOp.SEP_CONV_3X3.code, 0, 12)
        shape = TensorShape(3, 48, 48)
        assert arch_flops(early, shape, CFG).total_macs > arch_flops(late, shape, CFG).total_macs

    def test_all_identity_closed_form(self):
        # independent arithmetic: stem + 11 normal cells + upsample cell + tail
        arch = zero_arch()  # position 1: upsample first, 11 HR normal cells
        h = w = 48
        hr = 4 * h * w
        stem = 9 * 3 * 32 * h * w
        up_cell = 2 * (32 * 8 * h * w) + 8 * (4 * 8 * hr)  # calib + 8 area edges at HR
        normal_hr = 2 * (32 * 8 * hr)
        tail = 9 * 32 * 3 * hr
        expect = stem + up_cell + 11 * normal_hr + tail
        assert arch_flops(arch, TensorShape(3, h, w), CFG).total_macs == expect

    def test_position_monotone_random_cells(self, rng):
        shape = TensorShape(3, 48, 48)
        for _ in range(100):
            arch = random_arch(SPACE, rng)
            totals = [
                arch_flops(ArchSpec(arch.normal_cell, arch.upsample_cell, p, SPACE.L), shape, CFG).total_macs
                for p in range(1, SPACE.L + 1)
            ]
            assert all(a > b for a, b in zip(totals, totals[1:])), totals

    def test_scaling_law(self, rng):
        # doubling H and W multiplies everything by 4 except RCAB's pooled
        # attention vector work, which is resolution-independent by design
        small, big = TensorShape(3, 24, 24), TensorShape(3, 48, 48)
        for _ in range(50):
            arch = random_arch(SPACE, rng)
            rep1 = arch_flops(arch, small, CFG)
            rep2 = arch_flops(arch, big, CFG)
            squeeze = max(CFG.per_op_channels // CFG.rcab_reduction, 1)
            attn = 2 * CFG.per_op_channels * squeeze
            for lc1, lc2 in zip(rep1.per_layer, rep2.per_layer):
                n_rcab = 0
                if lc1.kind == "normal":
                    n_rcab = sum(
                        1 for _t, _s, op, _sl in arch.normal_cell.edges() if op == NormalOp.RCAB.code
                    )
                const = n_rcab * attn
                assert lc2.macs - const == 4 * (lc1.macs - const), (lc1.kind, lc1.macs, lc2.macs)

    def test_pure_function(self, rng):
        arch = random_arch(SPACE, rng)
        shape = TensorShape(3, 48, 48)
        assert arch_flops(arch, shape, CFG).to_json() == arch_flops(arch, shape, CFG).to_json()


class TestShapeTrace:
    def test_position_10(self):
        arch = all_op_arch(0, 0, 10)
        trace = shape_trace(arch, TensorShape(3, 48, 48), CFG)
        assert len(trace) == SPACE.L + 2
        assert trace[0] == TensorShape(32, 48, 48)  # stem
        for i in range(1, 10):
            assert trace[i].height == 48
        for i in range(10, 13):
            assert trace[i].height == 96
        assert trace[13] == TensorShape(3, 96, 96)  # tail

    def test_scale_1_constant(self):
        cfg = CostConfig(scale=1)
        trace = shape_trace(all_op_arch(0, 0, 6), TensorShape(3, 48, 48), cfg)
        assert all(s.height == 48 and s.width == 48 for s in trace)

    def test_single_jump(self, rng):
        for _ in range(20):
            arch = random_arch(SPACE, rng)
            trace = shape_trace(arch, TensorShape(3, 48, 48), CFG)
            jumps = sum(1 for a, b in zip(trace, trace[1:]) if b.height != a.height)
            assert jumps == 1


class TestFormatting:
    def test_three_significant_digits(self):
        assert format_gmacs(30_600_000_000) == "30.6"
        assert format_gmacs(83_600_000_000) == "83.6"
        assert format_gmacs(123_456_789) == "0.123"

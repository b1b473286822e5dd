import math

import numpy as np
import pytest

from srsearch.controller import (
    ArchSample,
    ControllerConfig,
    ControllerParams,
    cell_backward,
    controller_backward,
    max_entropy,
    sample_arch,
    sample_cell,
    sample_position,
    score_arch,
    score_cell,
    softmax,
    tensor_shapes,
    uniform_log_prob,
)
from srsearch.space import SpaceConfig, enumerate_archs, random_arch

from conftest import finite_diff_check

SPACE = SpaceConfig()
CTRL = ControllerConfig()


def uniform_params(space=SPACE, ctrl=CTRL, seed=0):
    return ControllerParams.uniform(space, ctrl, np.random.default_rng(seed))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(np.zeros(3)), np.full(3, 1 / 3), atol=1e-15)

    def test_sums_to_one(self, rng):
        for _ in range(100):
            p = softmax(rng.standard_normal(rng.integers(2, 12)) * 10)
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.all(p > 0)

    def test_shift_invariance(self, rng):
        z = rng.standard_normal(7)
        np.testing.assert_allclose(softmax(z), softmax(z + 123.456), atol=1e-12)

    def test_no_overflow(self):
        p = softmax(np.array([1000.0, 0.0]))
        assert p[0] > 0.999999 and np.isfinite(p).all()

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            softmax(np.array([0.0, float("nan")]))


class TestZeroInitAnalytics:
    def test_cell_log_prob_and_entropy(self):
        params = ControllerParams.zeros(SPACE, CTRL)
        cell, lp, ent, h_last, _ = sample_cell("normal", params, np.random.default_rng(0))
        expect = -(2 * sum(math.log(t + 2) for t in range(4)) + 8 * math.log(7))
        assert abs(lp - expect) < 1e-12
        assert abs(ent + expect) < 1e-12  # maximum entropy == -uniform log prob
        assert np.allclose(h_last, 0.0)

    def test_upsample_cell_log_prob(self):
        params = ControllerParams.zeros(SPACE, CTRL)
        _, lp, _, _, _ = sample_cell("upsample", params, np.random.default_rng(0))
        expect = -(2 * sum(math.log(t + 2) for t in range(4)) + 8 * math.log(5))
        assert abs(lp - expect) < 1e-12

    def test_position_uniform(self):
        params = ControllerParams.zeros(SPACE, CTRL)
        h = np.zeros(CTRL.hidden)
        counts = np.zeros(SPACE.L)
        rng = np.random.default_rng(5)
        for _ in range(200):
            pos, lp, ent = sample_position(h, h, params, rng)
            assert 1 <= pos <= SPACE.L
            assert abs(lp - math.log(1 / 12)) < 1e-12
            assert abs(ent - math.log(12)) < 1e-12
            counts[pos - 1] += 1
        assert np.all(counts > 0)

    def test_arch_total_is_sum_of_components(self):
        params = ControllerParams.zeros(SPACE, CTRL)
        samp = sample_arch(params, np.random.default_rng(0))
        expect = uniform_log_prob(SPACE)
        assert abs(samp.log_prob - expect) < 1e-12
        assert abs(samp.entropy - max_entropy(SPACE)) < 1e-12


class TestSampling:
    def test_deterministic_under_seed(self):
        params = uniform_params()
        a = sample_arch(params, np.random.default_rng(9))
        b = sample_arch(params, np.random.default_rng(9))
        assert a.arch == b.arch and a.log_prob == b.log_prob and a.entropy == b.entropy

    def test_samples_valid_and_bounded(self, rng):
        from srsearch.space import validate_arch

        params = uniform_params(seed=3)
        for _ in range(200):
            samp = sample_arch(params, rng)
            assert validate_arch(samp.arch, SPACE) == []
            assert samp.log_prob <= 0.0
            assert 0.0 <= samp.entropy <= max_entropy(SPACE) + 1e-9

    def test_score_agrees_with_sample(self, rng):
        params = uniform_params(seed=4)
        for _ in range(1000):
            samp = sample_arch(params, rng, trace_on=False)
            lp, ent, _ = score_arch(params, samp.arch, trace_on=False)
            assert abs(lp - samp.log_prob) <= 1e-9
            assert abs(ent - samp.entropy) <= 1e-9

    def test_bridge_sensitivity(self):
        # position logits must react to h_N when bridge weights are nonzero
        params = uniform_params(seed=5)
        h = np.zeros(CTRL.hidden)
        eps = 1e-3
        base = score_position_logprob(params, h, h, 0)
        bumped = score_position_logprob(params, h + eps, h, 0)
        assert abs(bumped - base) > 0.0

    def test_score_rejects_invalid(self):
        from srsearch.space import ArchSpec, ArchValidationError

        params = uniform_params()
        arch = sample_arch(params, np.random.default_rng(0)).arch
        bad = ArchSpec(arch.normal_cell, arch.upsample_cell, 99, SPACE.L)
        with pytest.raises(ArchValidationError):
            score_arch(params, bad)


def score_position_logprob(params, h_n, h_u, token):
    from srsearch.controller import _Runner

    runner = _Runner(params, trace_on=False)
    runner.run_network(h_n, h_u, lambda p: token)
    return runner.log_prob


class TestNormalization:
    def test_truncated_space_sums_to_one(self):
        space = SpaceConfig(B=3, L=2)
        ctrl = ControllerConfig(hidden=16, embed=8)
        params = ControllerParams.uniform(space, ctrl, np.random.default_rng(11))
        total = 0.0
        for arch in enumerate_archs(space):
            lp, _, _ = score_arch(params, arch, trace_on=False)
            total += math.exp(lp)
        assert abs(total - 1.0) < 1e-6


class TestBackward:
    def test_zero_coefficients_zero_grads(self):
        params = uniform_params(seed=6)
        samp = sample_arch(params, np.random.default_rng(1))
        grads = controller_backward(params, samp.trace, 0.0, 0.0)
        assert all(np.all(g == 0) for g in grads.values())

    def test_missing_trace_raises(self):
        params = uniform_params()
        with pytest.raises(ValueError):
            controller_backward(params, None, 1.0)

    def test_unused_heads_have_zero_grad(self):
        # scoring only a normal cell must leave every upsample/network/bridge
        # tensor untouched
        params = uniform_params(seed=7)
        arch = sample_arch(params, np.random.default_rng(2)).arch
        _, _, _, steps = score_cell("normal", params, arch.normal_cell)
        grads = cell_backward(params, "normal", steps, 1.0, 0.5)
        touched = {
            name
            for name, g in grads.items()
            if np.any(g != 0)
        }
        allowed = {
            "normal.lstm.w_x", "normal.lstm.w_h", "normal.lstm.b",
            "emb.src", "emb.normal_op", "start.normal",
            "head.src", "head.normal_op",
        }
        assert touched <= allowed
        assert np.all(grads["head.upsample_op"] == 0)
        assert np.all(grads["bridge.h.w"] == 0)

    def test_gradcheck_reduced_config(self):
        space = SpaceConfig(B=5, L=3)
        ctrl = ControllerConfig(hidden=8, embed=4)
        for seed in range(2):
            params = ControllerParams.uniform(space, ctrl, np.random.default_rng(seed))
            arch = random_arch(space, np.random.default_rng(seed + 50))
            _, _, trace = score_arch(params, arch)
            grads = controller_backward(params, trace, 0.7, 0.3)

            def objective(p):
                lp, ent, _ = score_arch(p, arch, trace_on=False)
                return 0.7 * lp + 0.3 * ent

            worst, checked = finite_diff_check(objective, params, grads)
            assert checked == sum(np.prod(s) for s in tensor_shapes(space, ctrl).values())

    def test_gradcheck_with_logit_hooks(self):
        # tanh clip and temperature must be handled by the backward pass too
        space = SpaceConfig(B=4, L=2)
        ctrl = ControllerConfig(hidden=6, embed=3, logit_tanh_clip=2.5, logit_temperature=1.7)
        params = ControllerParams.uniform(space, ctrl, np.random.default_rng(8))
        arch = random_arch(space, np.random.default_rng(80))
        _, _, trace = score_arch(params, arch)
        grads = controller_backward(params, trace, 1.0, 0.2)

        def objective(p):
            lp, ent, _ = score_arch(p, arch, trace_on=False)
            return 1.0 * lp + 0.2 * ent

        finite_diff_check(objective, params, grads)

    def test_grad_determinism(self):
        params = uniform_params(seed=9)
        outs = []
        for _ in range(2):
            samp = sample_arch(params, np.random.default_rng(3))
            grads = controller_backward(params, samp.trace, 0.5, 0.1)
            outs.append(grads)
        for name in outs[0]:
            np.testing.assert_array_equal(outs[0][name], outs[1][name])


class TestCheckpointRoundTrip:
    def test_params_survive_serialization(self, tmp_path):
        from srsearch.checkpoint import load_tensors, save_tensors

        params = uniform_params(seed=10)
        path = tmp_path / "params.ckpt"
        save_tensors(path, params.tensors, {"purpose": "test"})
        tensors, meta = load_tensors(path)
        assert meta == {"purpose": "test"}
        assert set(tensors) == set(params.tensors)
        for name in tensors:
            np.testing.assert_array_equal(tensors[name], params.tensors[name])

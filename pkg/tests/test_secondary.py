"""Acceptance for the reference evaluator (sreval/, TypeScript).

Runs only when the evaluator is built (sreval/dist/main.js); everything goes
through the wire protocol, never through sreval internals.  The toy space is
depth 8: same hierarchy, sized so the whole bundle fits the runtime budget
on a slow host.  The +0.3 dB threshold was locked by calibration runs
(gains +0.36 and +0.46 dB on two dataset/weight seeds).
"""

import time
from pathlib import Path

import numpy as np
import pytest

from srsearch.controller import ControllerConfig
from srsearch.evaluators import ExternalEvaluator
from srsearch.space import SpaceConfig, random_arch
from srsearch.training import init_search_state, run_search, surrogate_profile

SERVER = Path(__file__).parent.parent / "sreval" / "dist" / "main.js"

pytestmark = [
    pytest.mark.secondary,
    pytest.mark.skipif(not SERVER.exists(), reason="sreval not built (npm run build)"),
]

SPACE = SpaceConfig(B=6, L=8)


def server_command(data_dir: str, seed: int = 7) -> str:
    return f"node {SERVER} serve --data {data_dir} --seed {seed}"


def test_protocol_conformance(tmp_path):
    """ping/eval/train round-trips; untrained eval sits in the bicubic
    sanity band (zero-init tail makes it exactly the baseline)."""
    rng = np.random.default_rng(0)
    with ExternalEvaluator(server_command(str(tmp_path / "data")), SPACE, timeout_s=300) as ev:
        ev.ping()
        arch = random_arch(SPACE, rng)
        m1 = ev.evaluate(arch, seed=0)
        m2 = ev.evaluate(arch, seed=0)
        assert m1.psnr == m2.psnr  # weight sharing: no training in between
        assert m1.cost > 0  # cost-model fallback when the evaluator sends null
        other = random_arch(SPACE, rng)
        untrained = ev.evaluate(other, seed=0)
        assert abs(untrained.psnr - m1.psnr) < 1.0  # sanity band around bicubic
        ack = ev.train_hook([arch, other], steps=1)
        assert ack["archs"] == 2


def test_training_beats_bicubic(tmp_path):
    """After 2000 shared-weight steps, random-arch validation PSNR exceeds
    the bicubic baseline by >= 0.3 dB (calibration-locked threshold)."""
    t0 = time.monotonic()
    rng = np.random.default_rng(1)
    with ExternalEvaluator(server_command(str(tmp_path / "data")), SPACE, timeout_s=600) as ev:
        baseline = ev.evaluate(random_arch(SPACE, rng), seed=0).psnr  # zero-init tail == bicubic
        for _ in range(100):
            batch = [random_arch(SPACE, rng) for _ in range(4)]
            ev.train_hook(batch, steps=20)
        gains = [ev.evaluate(random_arch(SPACE, rng), seed=0).psnr - baseline for _ in range(3)]
    assert min(gains) >= 0.3, f"gains over bicubic: {gains}"
    elapsed = time.monotonic() - t0
    assert elapsed < 900, f"training run took {elapsed:.0f} s"


def test_end_to_end_search_50_epochs(tmp_path):
    """The full REINFORCE driver against the reference evaluator: 50 epochs,
    w-updates and evaluations over the wire, no protocol errors."""
    t0 = time.monotonic()
    ctrl, rc, tc = surrogate_profile(lam=0.9, epochs=50, seed=3)
    tc.batch = 1
    tc.w_archs_per_epoch = 2
    tc.w_steps_per_epoch = 2
    with ExternalEvaluator(server_command(str(tmp_path / "data")), SPACE, timeout_s=300) as ev:
        state = init_search_state(SPACE, ctrl, 3)
        log = run_search(state, ev, rc, tc)
    assert len(log.records) == 50
    assert all(np.isfinite(r.reward) for r in log.records)
    elapsed = time.monotonic() - t0
    assert elapsed < 900, f"e2e search took {elapsed:.0f} s"

"""Benchmark the hot LSTM kernels: numba @njit vs the pure-numpy twin.

Kernel-level timings cover both implementations in one process; the
pipeline-level figure (sample + score + backward per architecture) uses
whichever backend is active, so run it twice to compare:

    python3 benchmarks/bench_kernels.py
    SRSEARCH_BACKEND=numpy python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from srsearch import kernels
from srsearch.controller import ControllerConfig, ControllerParams, controller_backward, sample_arch, score_arch
from srsearch.space import SpaceConfig

H, E = 100, 32
STEPS = 20_000


def bench_kernel(impl, n=STEPS):
    rng = np.random.default_rng(0)
    w_x = rng.standard_normal((4 * H, E)) * 0.1
    w_h = rng.standard_normal((4 * H, H)) * 0.1
    b = rng.standard_normal(4 * H) * 0.1
    x = rng.standard_normal(E)
    h = np.zeros(H)
    c = np.zeros(H)
    fwd = impl["lstm_forward"]
    bwd = impl["lstm_backward"]

    fwd(w_x, w_h, b, x, h, c)  # jit warmup
    t0 = time.perf_counter()
    for _ in range(n):
        h2, c2, gates = fwd(w_x, w_h, b, x, h, c)
    t_fwd = time.perf_counter() - t0

    h2, c2, gates = fwd(w_x, w_h, b, x, h, c)
    dwx = np.zeros_like(w_x)
    dwh = np.zeros_like(w_h)
    db = np.zeros_like(b)
    dh = np.ones(H)
    dc = np.zeros(H)
    bwd(w_x, w_h, x, h, c, gates, c2, dh, dc, dwx, dwh, db)
    t0 = time.perf_counter()
    for _ in range(n):
        bwd(w_x, w_h, x, h, c, gates, c2, dh, dc, dwx, dwh, db)
    t_bwd = time.perf_counter() - t0
    return t_fwd / n * 1e6, t_bwd / n * 1e6


def bench_pipeline(n=300):
    space = SpaceConfig()
    params = ControllerParams.uniform(space, ControllerConfig(), np.random.default_rng(1))
    rng = np.random.default_rng(2)
    sample_arch(params, rng)  # warmup
    t0 = time.perf_counter()
    for _ in range(n):
        samp = sample_arch(params, rng, trace_on=True)
        lp, ent, trace = score_arch(params, samp.arch)
        controller_backward(params, trace, 0.5, 0.01)
    return (time.perf_counter() - t0) / n * 1e3


def main():
    print(f"hidden={H} embed={E}, {STEPS} kernel calls per timing")
    rows = [("numpy", kernels.NUMPY_IMPL)]
    if kernels.NUMBA_IMPL is not None:
        rows.append(("numba", kernels.NUMBA_IMPL))
    results = {}
    for name, impl in rows:
        fwd_us, bwd_us = bench_kernel(impl)
        results[name] = (fwd_us, bwd_us)
        print(f"  {name:>6}: lstm forward {fwd_us:8.2f} us/step   backward {bwd_us:8.2f} us/step")
    if "numba" in results:
        f_ratio = results["numpy"][0] / results["numba"][0]
        b_ratio = results["numpy"][1] / results["numba"][1]
        print(f"  speedup numba vs numpy: forward {f_ratio:.2f}x, backward {b_ratio:.2f}x")

    ms = bench_pipeline()
    print(f"pipeline ({kernels.backend_name()} backend): sample+score+backward = {ms:.2f} ms/arch")


if __name__ == "__main__":
    main()

"""LSTM step kernels: the hot inner loop of policy sampling and BPTT.

Two interchangeable implementations live here: numba @njit kernels and a
pure-numpy twin.  Selection order:

  * SRSEARCH_BACKEND=numpy  forces the numpy path
  * SRSEARCH_BACKEND=numba  forces numba (raises if numba is unavailable)
  * unset                   numba when importable, else numpy

Both paths are bit-compatible contracts, tested against each other; the
benchmark in benchmarks/bench_kernels.py compares their throughput.

Gate order inside the packed 4H preactivation: input, forget, cell, output.
All tensors are float64, C-contiguous.
"""

from __future__ import annotations

import os

import numpy as np


def _np_lstm_forward(w_x, w_h, b, x, h, c):
    """One LSTM step.  Returns (h_new, c_new, gates) with gates the
    activated (i, f, g, o) values packed into one 4H vector, needed by the
    backward pass."""
    hsz = h.shape[0]
    z = w_x @ x + w_h @ h + b
    gates = np.empty_like(z)
    gates[: 2 * hsz] = 1.0 / (1.0 + np.exp(-z[: 2 * hsz]))  # i, f
    gates[2 * hsz : 3 * hsz] = np.tanh(z[2 * hsz : 3 * hsz])  # g
    gates[3 * hsz :] = 1.0 / (1.0 + np.exp(-z[3 * hsz :]))  # o
    i = gates[:hsz]
    f = gates[hsz : 2 * hsz]
    g = gates[2 * hsz : 3 * hsz]
    o = gates[3 * hsz :]
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new, gates


def _np_lstm_backward(
    w_x, w_h, x, h_prev, c_prev, gates, c_new, dh, dc,
    dw_x, dw_h, db,
):
    """Backward of one LSTM step.  Accumulates into dw_x/dw_h/db in place
    and returns (dx, dh_prev, dc_prev)."""
    hsz = h_prev.shape[0]
    i = gates[:hsz]
    f = gates[hsz : 2 * hsz]
    g = gates[2 * hsz : 3 * hsz]
    o = gates[3 * hsz :]

    tc = np.tanh(c_new)
    do = dh * tc
    dc_total = dc + dh * o * (1.0 - tc * tc)
    di = dc_total * g
    df = dc_total * c_prev
    dg = dc_total * i
    dc_prev = dc_total * f

    dz = np.empty(4 * hsz)
    dz[:hsz] = di * i * (1.0 - i)
    dz[hsz : 2 * hsz] = df * f * (1.0 - f)
    dz[2 * hsz : 3 * hsz] = dg * (1.0 - g * g)
    dz[3 * hsz :] = do * o * (1.0 - o)

    dw_x += np.outer(dz, x)
    dw_h += np.outer(dz, h_prev)
    db += dz
    dx = w_x.T @ dz
    dh_prev = w_h.T @ dz
    return dx, dh_prev, dc_prev


def _build_numba():
    from numba import njit

    @njit(cache=True)
    def lstm_forward(w_x, w_h, b, x, h, c):
        hsz = h.shape[0]
        z = np.dot(w_x, x) + np.dot(w_h, h) + b
        gates = np.empty_like(z)
        for j in range(2 * hsz):
            gates[j] = 1.0 / (1.0 + np.exp(-z[j]))
        for j in range(2 * hsz, 3 * hsz):
            gates[j] = np.tanh(z[j])
        for j in range(3 * hsz, 4 * hsz):
            gates[j] = 1.0 / (1.0 + np.exp(-z[j]))
        c_new = np.empty(hsz)
        h_new = np.empty(hsz)
        for j in range(hsz):
            c_new[j] = gates[hsz + j] * c[j] + gates[j] * gates[2 * hsz + j]
            h_new[j] = gates[3 * hsz + j] * np.tanh(c_new[j])
        return h_new, c_new, gates

    @njit(cache=True)
    def lstm_backward(
        w_x, w_h, x, h_prev, c_prev, gates, c_new, dh, dc,
        dw_x, dw_h, db,
    ):
        hsz = h_prev.shape[0]
        dz = np.empty(4 * hsz)
        dc_prev = np.empty(hsz)
        for j in range(hsz):
            i = gates[j]
            f = gates[hsz + j]
            g = gates[2 * hsz + j]
            o = gates[3 * hsz + j]
            tc = np.tanh(c_new[j])
            do = dh[j] * tc
            dct = dc[j] + dh[j] * o * (1.0 - tc * tc)
            dz[j] = (dct * g) * i * (1.0 - i)
            dz[hsz + j] = (dct * c_prev[j]) * f * (1.0 - f)
            dz[2 * hsz + j] = (dct * i) * (1.0 - g * g)
            dz[3 * hsz + j] = do * o * (1.0 - o)
            dc_prev[j] = dct * f

        xn = x.shape[0]
        for r in range(4 * hsz):
            zr = dz[r]
            for cidx in range(xn):
                dw_x[r, cidx] += zr * x[cidx]
            for cidx in range(hsz):
                dw_h[r, cidx] += zr * h_prev[cidx]
            db[r] += zr
        dx = np.dot(w_x.T, dz)
        dh_prev = np.dot(w_h.T, dz)
        return dx, dh_prev, dc_prev

    return lstm_forward, lstm_backward


NUMPY_IMPL = {"lstm_forward": _np_lstm_forward, "lstm_backward": _np_lstm_backward}

_requested = os.environ.get("SRSEARCH_BACKEND", "").strip().lower()
NUMBA_IMPL = None
if _requested != "numpy":
    try:
        _fw, _bw = _build_numba()
        NUMBA_IMPL = {"lstm_forward": _fw, "lstm_backward": _bw}
    except ImportError:
        if _requested == "numba":
            raise

if _requested == "numpy" or NUMBA_IMPL is None:
    BACKEND = "numpy"
    lstm_forward = NUMPY_IMPL["lstm_forward"]
    lstm_backward = NUMPY_IMPL["lstm_backward"]
else:
    BACKEND = "numba"
    lstm_forward = NUMBA_IMPL["lstm_forward"]
    lstm_backward = NUMBA_IMPL["lstm_backward"]


def backend_name() -> str:
    return BACKEND

"""Shared test helpers: a strict little DOT parser (independent grammar
oracle for graph exports), a finite-difference gradient checker, and
loop-count MAC oracles that literally count multiply-adds with nested loops.
"""

from __future__ import annotations

import re

import numpy as np
import pytest

# ---------------------------------------------------------------------------
# DOT grammar oracle

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<string>"(?:[^"\\]|\\.)*")
      | (?P<arrow>->)
      | (?P<sym>[{}\[\];,=])
      | (?P<ident>[A-Za-z0-9_.\-]+)
    )""",
    re.VERBOSE,
)


def _tokenize_dot(text: str) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ValueError(f"dot: cannot tokenize at {text[pos:pos + 30]!r}")
        pos = m.end()
        tok = m.group(0).strip()
        if tok:
            tokens.append(tok)
    return tokens


class DotGraph:
    def __init__(self, name: str):
        self.name = name
        self.nodes: set[str] = set()
        self.edges: list[tuple[str, str, dict]] = []


def parse_dot(text: str) -> list[DotGraph]:
    """Parse one or more digraphs; raises ValueError on anything off-grammar."""
    toks = _tokenize_dot(text)
    i = 0

    def expect(val):
        nonlocal i
        if i >= len(toks) or toks[i] != val:
            raise ValueError(f"dot: expected {val!r} at token {i} ({toks[i:i + 3]})")
        i += 1

    def unquote(s):
        return s[1:-1].replace('\\"', '"') if s.startswith('"') else s

    def parse_attrs():
        nonlocal i
        attrs = {}
        if i < len(toks) and toks[i] == "[":
            i += 1
            while toks[i] != "]":
                key = unquote(toks[i])
                i += 1
                expect("=")
                attrs[key] = unquote(toks[i])
                i += 1
                if toks[i] == ",":
                    i += 1
            expect("]")
        return attrs

    graphs = []
    while i < len(toks):
        expect("digraph")
        name = unquote(toks[i])
        i += 1
        expect("{")
        g = DotGraph(name)
        while toks[i] != "}":
            first = unquote(toks[i])
            i += 1
            if toks[i] == "=":  # graph-level attribute like rankdir=LR
                i += 2
            elif toks[i] == "->":
                prev = first
                g.nodes.add(prev)
                while i < len(toks) and toks[i] == "->":
                    i += 1
                    nxt = unquote(toks[i])
                    i += 1
                    g.nodes.add(nxt)
                    g.edges.append((prev, nxt, {}))
                    prev = nxt
                attrs = parse_attrs()
                if attrs:
                    g.edges[-1] = (g.edges[-1][0], g.edges[-1][1], attrs)
            else:
                g.nodes.add(first)
                parse_attrs()
            if i < len(toks) and toks[i] == ";":
                i += 1
        expect("}")
        graphs.append(g)
    return graphs


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def finite_diff_check(objective, params, analytic, h=1e-4, rtol=1e-4, atol=1e-8, names=None):
    """Compare analytic grads against central differences, every coordinate.

    Returns (worst_rel_err, n_checked); asserts the tolerance per entry."""
    worst = 0.0
    checked = 0
    for name in names if names is not None else params.tensors:
        arr = params.tensors[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            fp = objective(params)
            arr[idx] = orig - h
            fm = objective(params)
            arr[idx] = orig
            num = (fp - fm) / (2 * h)
            ana = analytic[name][idx]
            err = abs(num - ana)
            tol = atol + rtol * max(abs(num), abs(ana), 1e-4)
            assert err <= tol, f"{name}{idx}: analytic {ana} vs numeric {num} (err {err} > {tol})"
            rel = err / max(abs(num), abs(ana), 1e-4)
            worst = max(worst, rel)
            checked += 1
    return worst, checked


# ---------------------------------------------------------------------------
# loop-count MAC oracles: count one MAC per innermost multiply, nothing else


def loop_conv(k, c_in, c_out, h_out, w_out):
    count = 0
    for _co in range(c_out):
        for _ci in range(c_in):
            for _y in range(h_out):
                for _x in range(w_out):
                    count += k * k  # kernel taps at one output element
    return count


def loop_separable(k, c_in, c_out, h, w):
    depthwise = 0
    for _c in range(c_in):
        for _y in range(h):
            for _x in range(w):
                depthwise += k * k
    pointwise = loop_conv(1, c_in, c_out, h, w)
    return depthwise + pointwise


def loop_interp(per_px, c, h_out, w_out):
    count = 0
    for _c in range(c):
        for _y in range(h_out):
            for _x in range(w_out):
                count += per_px
    return count


def loop_subpixel(k, c_in, c_out, scale, h_in, w_in):
    return loop_conv(k, c_in, c_out * scale * scale, h_in, w_in)


def loop_rcab(c, h, w, reduction):
    squeeze = max(c // reduction, 1)
    count = 2 * loop_conv(3, c, c, h, w)
    count += loop_conv(1, c, squeeze, 1, 1) + loop_conv(1, squeeze, c, 1, 1)
    for _c in range(c):  # pooling then rescale, one MAC per element each
        for _y in range(h):
            for _x in range(w):
                count += 2
    return count


def loop_udpb(k, c, scale, h, w):
    up = loop_conv(k, c, c, h * scale, w * scale)
    down = loop_conv(k, c, c, h, w)
    return up + down + up


@pytest.fixture
def rng():
    return np.random.default_rng(20240)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for status, mark in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" in nodeid and getattr(rep, "when", "call") == "call":
                lines.append(f"[{mark}] {nodeid.split('::')[-1]}")
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

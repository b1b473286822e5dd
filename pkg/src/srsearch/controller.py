"""Hierarchical LSTM policy over architectures.

Three one-layer LSTMs: one per cell kind, plus a network-level controller
whose initial (h, c) is built by two affine bridge maps from the
concatenated final hidden states of the cell controllers.  Decisions per
intermediate node, in token order: source slot a, op slot a, source slot b,
op slot b; the source softmax head is shared by both cell controllers and
masked down to the t+2 valid predecessors of node t.

Sampling, teacher-forced scoring, and an exact backward pass (gradients of
coef_logprob * log pi(arch) + coef_entropy * entropy) all run off the same
step engine, so the probabilities they see are identical by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .space import (
    ArchSpec,
    ArchValidationError,
    CellSpec,
    NodeSpec,
    SpaceConfig,
    arch_to_tokens,
    op_count,
    tokens_to_arch,
    validate_arch,
)


@dataclass(frozen=True)
class ControllerConfig:
    hidden: int = 100
    embed: int = 32
    init_scale: float = 0.1
    # optional logit shaping, off by default: z -> clip * tanh(z / clip), then z / temperature
    logit_temperature: float = 1.0
    logit_tanh_clip: float | None = None


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax; rejects NaN inputs."""
    logits = np.asarray(logits, dtype=np.float64)
    if np.isnan(logits).any():
        raise ValueError("NaN in logits")
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def tensor_shapes(space: SpaceConfig, cfg: ControllerConfig) -> dict[str, tuple[int, ...]]:
    h, e = cfg.hidden, cfg.embed
    s = space.max_sources
    shapes: dict[str, tuple[int, ...]] = {}
    for name in ("normal", "upsample", "network"):
        shapes[f"{name}.lstm.w_x"] = (4 * h, e)
        shapes[f"{name}.lstm.w_h"] = (4 * h, h)
        shapes[f"{name}.lstm.b"] = (4 * h,)
    shapes["emb.src"] = (s, e)
    shapes["emb.normal_op"] = (space.normal_op_count, e)
    shapes["emb.upsample_op"] = (space.upsample_op_count, e)
    shapes["start.normal"] = (e,)
    shapes["start.upsample"] = (e,)
    shapes["start.network"] = (e,)
    shapes["head.src"] = (s, h)
    shapes["head.normal_op"] = (space.normal_op_count, h)
    shapes["head.upsample_op"] = (space.upsample_op_count, h)
    shapes["head.position"] = (space.L, h)
    shapes["bridge.h.w"] = (h, 2 * h)
    shapes["bridge.h.b"] = (h,)
    shapes["bridge.c.w"] = (h, 2 * h)
    shapes["bridge.c.b"] = (h,)
    return shapes


class ControllerParams:
    """All trainable tensors of the policy, keyed by stable names."""

    def __init__(self, space: SpaceConfig, cfg: ControllerConfig, tensors: dict[str, np.ndarray]):
        expected = tensor_shapes(space, cfg)
        if set(tensors) != set(expected):
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise ValueError(f"tensor names mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in tensors.items():
            if arr.shape != expected[name]:
                raise ValueError(f"{name}: shape {arr.shape} != expected {expected[name]}")
        self.space = space
        self.cfg = cfg
        self.tensors = {name: np.ascontiguousarray(arr, dtype=np.float64) for name, arr in tensors.items()}

    @classmethod
    def uniform(cls, space: SpaceConfig, cfg: ControllerConfig, rng: np.random.Generator) -> "ControllerParams":
        a = cfg.init_scale
        tensors = {
            name: rng.uniform(-a, a, size=shape)
            for name, shape in tensor_shapes(space, cfg).items()
        }
        return cls(space, cfg, tensors)

    @classmethod
    def zeros(cls, space: SpaceConfig, cfg: ControllerConfig) -> "ControllerParams":
        tensors = {name: np.zeros(shape) for name, shape in tensor_shapes(space, cfg).items()}
        return cls(space, cfg, tensors)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.tensors.items()}

    def copy(self) -> "ControllerParams":
        return ControllerParams(self.space, self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


# ---------------------------------------------------------------------------
# traces


@dataclass
class StepTrace:
    controller: str  # normal | upsample | network
    head: str  # head.src | head.normal_op | head.upsample_op | head.position
    valid: int
    x_table: str  # tensor name the input vector came from
    x_index: int  # row index, -1 for start vectors
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: np.ndarray
    c_new: np.ndarray
    h_new: np.ndarray
    probs: np.ndarray  # length == valid
    chosen: int


@dataclass
class ArchTrace:
    normal_steps: list[StepTrace]
    upsample_steps: list[StepTrace]
    bridge_concat: np.ndarray  # [h_N, h_U]
    network_step: StepTrace


@dataclass
class ArchSample:
    arch: ArchSpec
    log_prob: float
    entropy: float
    trace: ArchTrace | None = None


# ---------------------------------------------------------------------------
# forward engine


def _head_probs(params: ControllerParams, head: str, h: np.ndarray, valid: int) -> np.ndarray:
    cfg = params.cfg
    raw = params[head][:valid] @ h
    if cfg.logit_tanh_clip is not None:
        raw = cfg.logit_tanh_clip * np.tanh(raw / cfg.logit_tanh_clip)
    if cfg.logit_temperature != 1.0:
        raw = raw / cfg.logit_temperature
    return softmax(raw)


def _entropy(p: np.ndarray) -> float:
    return float(-(p * np.log(p)).sum())


def _pick(p: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return min(idx, len(p) - 1)


class _Runner:
    """Shared engine for sampling (chooser=rng pick) and scoring (chooser=token replay)."""

    def __init__(self, params: ControllerParams, trace_on: bool):
        self.params = params
        self.trace_on = trace_on
        self.log_prob = 0.0
        self.entropy = 0.0

    def run_controller(self, controller: str, decisions) -> tuple[list[int], np.ndarray, list[StepTrace]]:
        """decisions: iterable of (head_name, valid, next_emb_table, chooser).

        Returns (choices, final hidden state, step traces).
        """
        p = self.params
        hsz = p.cfg.hidden
        h = np.zeros(hsz)
        c = np.zeros(hsz)
        x_table = f"start.{controller}"
        x_index = -1
        x = p[x_table]
        w_x = p[f"{controller}.lstm.w_x"]
        w_h = p[f"{controller}.lstm.w_h"]
        b = p[f"{controller}.lstm.b"]

        choices: list[int] = []
        steps: list[StepTrace] = []
        for head, valid, emb_table, chooser in decisions:
            h_new, c_new, gates = kernels.lstm_forward(w_x, w_h, b, x, h, c)
            probs = _head_probs(p, head, h_new, valid)
            chosen = chooser(probs)
            self.log_prob += float(np.log(probs[chosen]))
            self.entropy += _entropy(probs)
            if self.trace_on:
                steps.append(
                    StepTrace(controller, head, valid, x_table, x_index, x, h, c, gates, c_new, h_new, probs, chosen)
                )
            choices.append(chosen)
            h, c = h_new, c_new
            if emb_table is not None:
                x_table, x_index = emb_table, chosen
                x = p[emb_table][chosen]
        return choices, h, steps

    def run_network(self, h_n: np.ndarray, h_u: np.ndarray, chooser) -> tuple[int, np.ndarray, StepTrace | None]:
        p = self.params
        concat = np.concatenate([h_n, h_u])
        h0 = p["bridge.h.w"] @ concat + p["bridge.h.b"]
        c0 = p["bridge.c.w"] @ concat + p["bridge.c.b"]
        x = p["start.network"]
        h1, c1, gates = kernels.lstm_forward(
            p["network.lstm.w_x"], p["network.lstm.w_h"], p["network.lstm.b"], x, h0, c0
        )
        probs = _head_probs(p, "head.position", h1, p.space.L)
        chosen = chooser(probs)
        self.log_prob += float(np.log(probs[chosen]))
        self.entropy += _entropy(probs)
        step = None
        if self.trace_on:
            step = StepTrace(
                "network", "head.position", p.space.L, "start.network", -1, x, h0, c0, gates, c1, h1, probs, chosen
            )
        return chosen, concat, step


def _cell_decisions(space: SpaceConfig, kind: str, choosers):
    """Yield the per-step decision plan for one cell controller."""
    op_head = f"head.{kind}_op"
    op_emb = f"emb.{kind}_op"
    k = op_count(kind)
    it = iter(choosers)
    for t in range(space.intermediates):
        for _slot in ("a", "b"):
            yield "head.src", t + 2, "emb.src", next(it)
            yield op_head, k, op_emb, next(it)


def _cell_from_choices(kind: str, choices: list[int]) -> CellSpec:
    nodes = []
    for i in range(0, len(choices), 4):
        sa, oa, sb, ob = choices[i : i + 4]
        nodes.append(NodeSpec(sa - 2, oa, sb - 2, ob))
    return CellSpec(kind, tuple(nodes))


def sample_cell(
    kind: str,
    params: ControllerParams,
    rng: np.random.Generator,
    trace_on: bool = False,
) -> tuple[CellSpec, float, float, np.ndarray, list[StepTrace]]:
    """Sample one cell.  Returns (cell, log_prob, entropy, h_last, steps)."""
    runner = _Runner(params, trace_on)
    n_steps = params.space.intermediates * 4
    choosers = [lambda p: _pick(p, rng)] * n_steps
    choices, h_last, steps = runner.run_controller(kind, _cell_decisions(params.space, kind, choosers))
    return _cell_from_choices(kind, choices), runner.log_prob, runner.entropy, h_last, steps


def score_cell(
    kind: str,
    params: ControllerParams,
    cell: CellSpec,
    trace_on: bool = True,
) -> tuple[float, float, np.ndarray, list[StepTrace]]:
    """Teacher-forced replay of one cell.  Returns (log_prob, entropy, h_last, steps)."""
    runner = _Runner(params, trace_on)
    toks: list[int] = []
    for node in cell.nodes:
        toks.extend([node.src_a + 2, node.op_a, node.src_b + 2, node.op_b])
    choosers = [(lambda p, t=t: t) for t in toks]
    _choices, h_last, steps = runner.run_controller(kind, _cell_decisions(params.space, kind, choosers))
    return runner.log_prob, runner.entropy, h_last, steps


def cell_backward(
    params: ControllerParams,
    kind: str,
    steps: list[StepTrace],
    coef_logprob: float,
    coef_entropy: float = 0.0,
) -> dict[str, np.ndarray]:
    """Gradients of a single cell's objective; tensors the cell never
    touches stay zero."""
    grads = params.zero_grads()
    dh_final = np.zeros(params.cfg.hidden)
    _cell_backward(params, grads, kind, steps, dh_final, coef_logprob, coef_entropy)
    return grads


def sample_position(
    h_n: np.ndarray,
    h_u: np.ndarray,
    params: ControllerParams,
    rng: np.random.Generator,
) -> tuple[int, float, float]:
    """Sample the upsampling position in [1, L] from the bridged state."""
    runner = _Runner(params, trace_on=False)
    chosen, _concat, _step = runner.run_network(h_n, h_u, lambda p: _pick(p, rng))
    return chosen + 1, runner.log_prob, runner.entropy


def sample_arch(
    params: ControllerParams,
    rng: np.random.Generator,
    trace_on: bool = True,
) -> ArchSample:
    """Sample a full architecture; log_prob/entropy sum the three controllers."""
    runner = _Runner(params, trace_on)
    space = params.space
    n_steps = space.intermediates * 4

    def sample_chooser(p):
        return _pick(p, rng)

    n_choices, h_n, n_steps_tr = runner.run_controller(
        "normal", _cell_decisions(space, "normal", [sample_chooser] * n_steps)
    )
    u_choices, h_u, u_steps_tr = runner.run_controller(
        "upsample", _cell_decisions(space, "upsample", [sample_chooser] * n_steps)
    )
    pos_choice, concat, net_step = runner.run_network(h_n, h_u, sample_chooser)

    arch = ArchSpec(
        normal_cell=_cell_from_choices("normal", n_choices),
        upsample_cell=_cell_from_choices("upsample", u_choices),
        position=pos_choice + 1,
        depth=space.L,
    )
    trace = None
    if trace_on:
        trace = ArchTrace(n_steps_tr, u_steps_tr, concat, net_step)
    return ArchSample(arch, runner.log_prob, runner.entropy, trace)


def score_arch(
    params: ControllerParams,
    arch: ArchSpec,
    trace_on: bool = True,
) -> tuple[float, float, ArchTrace | None]:
    """Teacher-forced replay of arch's token sequence under the policy."""
    space = params.space
    violations = validate_arch(arch, space)
    if violations:
        raise ArchValidationError(violations)
    tokens = arch_to_tokens(arch, space)
    per_cell = space.intermediates * 4

    runner = _Runner(params, trace_on)

    def replay(toks):
        return [(lambda p, t=t: t) for t in toks]

    n_choices, h_n, n_steps_tr = runner.run_controller(
        "normal", _cell_decisions(space, "normal", replay(tokens[:per_cell]))
    )
    u_choices, h_u, u_steps_tr = runner.run_controller(
        "upsample", _cell_decisions(space, "upsample", replay(tokens[per_cell : 2 * per_cell]))
    )
    pos_choice, concat, net_step = runner.run_network(h_n, h_u, lambda p: tokens[-1])

    trace = None
    if trace_on:
        trace = ArchTrace(n_steps_tr, u_steps_tr, concat, net_step)
    return runner.log_prob, runner.entropy, trace


# ---------------------------------------------------------------------------
# backward


def _head_backward(
    params: ControllerParams,
    grads: dict[str, np.ndarray],
    step: StepTrace,
    coef_logprob: float,
    coef_entropy: float,
) -> np.ndarray:
    """Gradient of the step objective w.r.t. h_new; accumulates head grads."""
    cfg = params.cfg
    p = step.probs
    logp = np.log(p)
    ent = -(p * logp).sum()

    dz = np.zeros(step.valid)
    if coef_logprob != 0.0:
        dz[step.chosen] += coef_logprob
        dz -= coef_logprob * p
    if coef_entropy != 0.0:
        dz += coef_entropy * (-p * (logp + ent))

    # undo logit shaping hooks (no-ops at the defaults)
    if cfg.logit_temperature != 1.0:
        dz = dz / cfg.logit_temperature
    if cfg.logit_tanh_clip is not None:
        raw = params[step.head][: step.valid] @ step.h_new
        th = np.tanh(raw / cfg.logit_tanh_clip)
        dz = dz * (1.0 - th * th)

    grads[step.head][: step.valid] += np.outer(dz, step.h_new)
    return params[step.head][: step.valid].T @ dz


def _cell_backward(
    params: ControllerParams,
    grads: dict[str, np.ndarray],
    controller: str,
    steps: list[StepTrace],
    dh_final: np.ndarray,
    coef_logprob: float,
    coef_entropy: float,
) -> None:
    p = params
    w_x = p[f"{controller}.lstm.w_x"]
    w_h = p[f"{controller}.lstm.w_h"]
    dwx = grads[f"{controller}.lstm.w_x"]
    dwh = grads[f"{controller}.lstm.w_h"]
    db = grads[f"{controller}.lstm.b"]

    dh_carry = dh_final.copy()
    dc_carry = np.zeros_like(dh_final)
    for step in reversed(steps):
        dh = dh_carry + _head_backward(params, grads, step, coef_logprob, coef_entropy)
        dx, dh_prev, dc_prev = kernels.lstm_backward(
            w_x, w_h, step.x, step.h_prev, step.c_prev, step.gates, step.c_new, dh, dc_carry, dwx, dwh, db
        )
        if step.x_index < 0:
            grads[step.x_table] += dx
        else:
            grads[step.x_table][step.x_index] += dx
        dh_carry, dc_carry = dh_prev, dc_prev


def controller_backward(
    params: ControllerParams,
    trace: ArchTrace,
    coef_logprob: float,
    coef_entropy: float = 0.0,
) -> dict[str, np.ndarray]:
    """Exact gradients of coef_logprob * log_prob + coef_entropy * entropy.

    Backpropagates through the position head, the network LSTM, the bridge,
    and then both cell controllers (whose final hidden states feed the
    bridge), accumulating into a fresh gradient dict.
    """
    if trace is None:
        raise ValueError("backward requires a trace; sample or score with trace_on=True")
    grads = params.zero_grads()
    if coef_logprob == 0.0 and coef_entropy == 0.0:
        return grads

    step = trace.network_step
    dh1 = _head_backward(params, grads, step, coef_logprob, coef_entropy)
    dc1 = np.zeros_like(dh1)
    dx, dh0, dc0 = kernels.lstm_backward(
        params["network.lstm.w_x"],
        params["network.lstm.w_h"],
        step.x,
        step.h_prev,
        step.c_prev,
        step.gates,
        step.c_new,
        dh1,
        dc1,
        grads["network.lstm.w_x"],
        grads["network.lstm.w_h"],
        grads["network.lstm.b"],
    )
    grads["start.network"] += dx

    concat = trace.bridge_concat
    grads["bridge.h.w"] += np.outer(dh0, concat)
    grads["bridge.h.b"] += dh0
    grads["bridge.c.w"] += np.outer(dc0, concat)
    grads["bridge.c.b"] += dc0
    dconcat = params["bridge.h.w"].T @ dh0 + params["bridge.c.w"].T @ dc0
    hsz = params.cfg.hidden
    _cell_backward(params, grads, "normal", trace.normal_steps, dconcat[:hsz], coef_logprob, coef_entropy)
    _cell_backward(params, grads, "upsample", trace.upsample_steps, dconcat[hsz:], coef_logprob, coef_entropy)
    return grads


# ---------------------------------------------------------------------------
# analytic reference values used by tests and docs


def uniform_log_prob(space: SpaceConfig) -> float:
    """log-probability of any arch under the zero-initialized (uniform) policy."""
    total = 0.0
    for kind in ("normal", "upsample"):
        k = op_count(kind)
        for t in range(space.intermediates):
            total += 2 * (math.log(t + 2) + math.log(k))
    total += math.log(space.L)
    return -total


def max_entropy(space: SpaceConfig) -> float:
    return -uniform_log_prob(space)

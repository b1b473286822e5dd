"""Policy-side training loop: joint reward, REINFORCE with entropy bonus,
Adam on the negated objective, cosine learning-rate schedule, the search
driver, and final architecture derivation.

The reward normalizes its two ingredients before mixing (quality affinely
onto [0, 1] over configurable dB bounds, cost divided by a G-MAC budget);
otherwise the trade-off coefficient would be meaningless against raw
dB-vs-FLOPs magnitudes.  Form stays: lam * quality - (1 - lam) * cost.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .controller import ArchSample, ControllerConfig, ControllerParams, controller_backward, sample_arch
from .evaluators import EvaluatorError, Measurement
from .space import ArchSpec, SpaceConfig, arch_to_tokens, tokens_to_arch


@dataclass
class RewardConfig:
    lam: float = 0.9
    psnr_lo: float = 20.0
    psnr_hi: float = 40.0
    cost_budget_gmacs: float = 100.0  # paper-shape budget; search profile uses 1.0 at 48x48
    entropy_weight: float = 1.0

    def __post_init__(self):
        if not self.psnr_lo < self.psnr_hi:
            raise ValueError("psnr_lo must be < psnr_hi")
        if self.cost_budget_gmacs <= 0:
            raise ValueError("cost budget must be positive")


@dataclass
class TrainConfig:
    epochs: int = 400
    lr_max: float = 3e-4
    lr_min: float = 1.5e-4
    batch: int = 1
    baseline_decay: float = 0.95
    use_baseline: bool = True
    seed: int = 0
    theta_steps_per_epoch: int = 1
    w_archs_per_epoch: int = 1
    w_steps_per_epoch: int = 1
    checkpoint_every: int = 0  # epochs; 0 means final only

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must be <= lr_max")


def surrogate_profile(
    lam: float = 0.9, epochs: int = 2000, seed: int = 0
) -> tuple[ControllerConfig, RewardConfig, TrainConfig]:
    """Defaults tuned for surrogate runs at the 3x48x48 search shape.

    The budget is the paper-shape 100 G scaled by the 100x area ratio; the
    entropy weight and learning rates are rescaled to the normalized reward
    (see README), since the literature values target dB-scale rewards.  The
    bounded logits (tanh clip) keep gradients alive once the policy
    concentrates.
    """
    ctrl = ControllerConfig(logit_tanh_clip=5.0)
    rc = RewardConfig(lam=lam, cost_budget_gmacs=1.0, entropy_weight=0.005)
    tc = TrainConfig(epochs=epochs, lr_max=0.05, lr_min=0.01, batch=2, baseline_decay=0.9, seed=seed)
    return ctrl, rc, tc


def joint_reward(m: Measurement, rc: RewardConfig) -> float:
    if not math.isfinite(m.psnr):
        raise ValueError(f"non-finite psnr {m.psnr}")
    quality = (m.psnr - rc.psnr_lo) / (rc.psnr_hi - rc.psnr_lo)
    quality = min(max(quality, 0.0), 1.0)
    return rc.lam * quality - (1.0 - rc.lam) * (m.cost_gmacs / rc.cost_budget_gmacs)


def cosine_lr(t: int, total: int, lr_max: float, lr_min: float) -> float:
    if not 0 <= t <= total:
        raise ValueError(f"t={t} outside [0, {total}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, tensors: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in tensors.items()},
            v={k: np.zeros_like(a) for k, a in tensors.items()},
        )


def adam_update(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    hyper: AdamConfig = AdamConfig(),
) -> None:
    """One in-place Adam minimization step over a named-tensor tree."""
    state.t += 1
    bc1 = 1.0 - hyper.beta1**state.t
    bc2 = 1.0 - hyper.beta2**state.t
    for name, g in grads.items():
        if g.shape != tensors[name].shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {tensors[name].shape}")
        m = state.m[name]
        v = state.v[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        tensors[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)


# ---------------------------------------------------------------------------
# REINFORCE


def reinforce_step(
    samples: list[tuple[ArchSample, float]],
    baseline: float | None,
    params: ControllerParams,
    opt_state: AdamState,
    rc: RewardConfig,
    lr: float,
    use_baseline: bool = True,
    baseline_decay: float = 0.95,
    hyper: AdamConfig = AdamConfig(),
) -> float:
    """One ascent step on mean[(reward - baseline) * grad log pi + w * grad entropy].

    Maximization runs through Adam on the negated gradient.  A baseline of
    None (fresh search) is initialized to the batch mean, which keeps it a
    convex combination of observed rewards from the very first step.
    Returns the updated baseline.
    """
    if not samples:
        raise ValueError("empty sample batch")
    rewards = np.array([r for _, r in samples], dtype=np.float64)
    if np.isnan(rewards).any():
        bad = [i for i, r in enumerate(rewards) if math.isnan(r)]
        raise ValueError(f"NaN reward at batch indices {bad}; aborting step")

    mean_reward = float(rewards.mean())
    if baseline is None:
        baseline = mean_reward

    n = len(samples)
    total = params.zero_grads()
    for (sample, reward) in samples:
        advantage = (reward - baseline) if use_baseline else reward
        g = controller_backward(params, sample.trace, advantage / n, rc.entropy_weight / n)
        for name, arr in g.items():
            total[name] += arr
    for arr in total.values():
        np.negative(arr, out=arr)  # maximize via the minimizer
    adam_update(params.tensors, total, opt_state, lr, hyper)

    return baseline_decay * baseline + (1.0 - baseline_decay) * mean_reward


# ---------------------------------------------------------------------------
# search log


@dataclass
class LogRecord:
    step: int
    tokens: list[int]
    psnr: float
    cost: int
    reward: float
    entropy: float
    baseline: float
    lr: float


@dataclass
class SearchLog:
    records: list[LogRecord] = field(default_factory=list)

    def append(self, rec: LogRecord) -> None:
        if self.records and rec.step < self.records[-1].step:
            raise ValueError("step index must be monotone")
        self.records.append(rec)

    def best(self) -> LogRecord:
        return max(self.records, key=lambda r: (r.reward, -r.cost))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("step,reward,psnr,cost_gmacs,entropy,baseline,lr\n")
        for r in self.records:
            buf.write(
                f"{r.step},{r.reward:.12g},{r.psnr:.12g},{r.cost / 1e9:.12g},"
                f"{r.entropy:.12g},{r.baseline:.12g},{r.lr:.12g}\n"
            )
        return buf.getvalue()


class SearchAbort(RuntimeError):
    """Evaluator kept failing; carries the partial log."""

    def __init__(self, msg: str, log: SearchLog):
        super().__init__(msg)
        self.log = log


def _with_retries(fn, what: str, log: SearchLog, attempts: int = 3):
    last: Exception | None = None
    for _ in range(attempts):
        try:
            return fn()
        except EvaluatorError as exc:
            last = exc
    raise SearchAbort(f"{what} failed after {attempts} attempts: {last}", log) from last


# ---------------------------------------------------------------------------
# search driver


@dataclass
class SearchState:
    params: ControllerParams
    opt_state: AdamState
    baseline: float | None
    rng: np.random.Generator
    epoch: int = 0
    theta_step: int = 0


def init_search_state(space: SpaceConfig, ctrl_cfg: ControllerConfig, seed: int) -> SearchState:
    rng = np.random.default_rng(seed)
    params = ControllerParams.uniform(space, ctrl_cfg, rng)
    return SearchState(params, AdamState.init(params.tensors), None, rng)


def run_search(
    state: SearchState,
    evaluator,
    rc: RewardConfig,
    tc: TrainConfig,
    log: SearchLog | None = None,
    checkpoint_path=None,
    until_epoch: int | None = None,
) -> SearchLog:
    """Alternating loop: delegate shared-weight updates to the evaluator,
    then sample/evaluate/reinforce the policy.  Both learning-rate schedules
    advance once per epoch (the evaluator owns its own w schedule).

    until_epoch stops early without touching the cosine schedule's total, so
    a checkpointed run resumes on the identical trajectory."""
    log = log if log is not None else SearchLog()
    params = state.params
    stop = tc.epochs if until_epoch is None else min(until_epoch, tc.epochs)

    while state.epoch < stop:
        lr = cosine_lr(state.epoch, tc.epochs, tc.lr_max, tc.lr_min)

        if tc.w_steps_per_epoch > 0:
            w_archs = [
                sample_arch(params, state.rng, trace_on=False).arch
                for _ in range(tc.w_archs_per_epoch)
            ]
            _with_retries(
                lambda: evaluator.train_hook(w_archs, tc.w_steps_per_epoch), "train_hook", log
            )

        for _ in range(tc.theta_steps_per_epoch):
            batch: list[tuple[ArchSample, float]] = []
            measurements: list[Measurement] = []
            for _ in range(tc.batch):
                sample = sample_arch(params, state.rng, trace_on=True)
                m = _with_retries(
                    lambda a=sample.arch: evaluator.evaluate(a, seed=tc.seed), "evaluate", log
                )
                batch.append((sample, joint_reward(m, rc)))
                measurements.append(m)
            if state.baseline is None:
                state.baseline = float(np.mean([r for _, r in batch]))
            for (sample, reward), m in zip(batch, measurements):
                log.append(
                    LogRecord(
                        step=state.theta_step,
                        tokens=arch_to_tokens(sample.arch, params.space),
                        psnr=m.psnr,
                        cost=m.cost,
                        reward=reward,
                        entropy=sample.entropy,
                        baseline=state.baseline,
                        lr=lr,
                    )
                )
            state.baseline = reinforce_step(
                batch,
                state.baseline,
                params,
                state.opt_state,
                rc,
                lr,
                use_baseline=tc.use_baseline,
                baseline_decay=tc.baseline_decay,
            )
            state.theta_step += 1

        state.epoch += 1
        if checkpoint_path and tc.checkpoint_every and state.epoch % tc.checkpoint_every == 0:
            save_search_checkpoint(checkpoint_path, state, rc, tc)

    if checkpoint_path:
        save_search_checkpoint(checkpoint_path, state, rc, tc)
    return log


# ---------------------------------------------------------------------------
# derivation


def derive(
    params: ControllerParams,
    evaluator,
    k: int,
    rc: RewardConfig,
    rng: np.random.Generator,
    parallel: int = 1,
) -> tuple[ArchSpec, list[dict]]:
    """Sample k candidates, evaluate, return the joint-reward argmax.

    Ties break toward lower cost, then lexicographically smaller token
    sequence.  Returns (best arch, per-candidate table)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    archs = [sample_arch(params, rng, trace_on=False).arch for _ in range(k)]
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            measurements = list(pool.map(lambda a: evaluator.evaluate(a), archs))
    else:
        measurements = [evaluator.evaluate(a) for a in archs]

    rows = []
    for arch, m in zip(archs, measurements):
        rows.append(
            {
                "tokens": arch_to_tokens(arch, params.space),
                "psnr": m.psnr,
                "cost": m.cost,
                "reward": joint_reward(m, rc),
            }
        )
    best = min(rows, key=lambda r: (-r["reward"], r["cost"], r["tokens"]))
    return tokens_to_arch(best["tokens"], params.space), rows


# ---------------------------------------------------------------------------
# search checkpointing


def save_search_checkpoint(path, state: SearchState, rc: RewardConfig, tc: TrainConfig) -> None:
    tensors: dict[str, np.ndarray] = {}
    for name, arr in state.params.tensors.items():
        tensors[f"param.{name}"] = arr
        tensors[f"adam.m.{name}"] = state.opt_state.m[name]
        tensors[f"adam.v.{name}"] = state.opt_state.v[name]
    ctrl = state.params.cfg
    meta = {
        "kind": "search_state",
        "epoch": state.epoch,
        "theta_step": state.theta_step,
        "adam_t": state.opt_state.t,
        "baseline": state.baseline,
        "rng_state": state.rng.bit_generator.state,
        "space": asdict(state.params.space),
        "controller": asdict(ctrl),
        "reward": asdict(rc),
        "train": asdict(tc),
    }
    ckpt.save_tensors(path, tensors, meta)


def load_search_checkpoint(path) -> tuple[SearchState, RewardConfig, TrainConfig]:
    tensors, meta = ckpt.load_tensors(path)
    if meta.get("kind") != "search_state":
        raise ValueError(f"{path}: not a search checkpoint")
    space = SpaceConfig(**meta["space"])
    ctrl_cfg = ControllerConfig(**meta["controller"])
    params = ControllerParams(
        space,
        ctrl_cfg,
        {k.removeprefix("param."): v for k, v in tensors.items() if k.startswith("param.")},
    )
    opt = AdamState(
        m={k.removeprefix("adam.m."): v for k, v in tensors.items() if k.startswith("adam.m.")},
        v={k.removeprefix("adam.v."): v for k, v in tensors.items() if k.startswith("adam.v.")},
        t=meta["adam_t"],
    )
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    state = SearchState(params, opt, meta["baseline"], rng, meta["epoch"], meta["theta_step"])
    return state, RewardConfig(**meta["reward"]), TrainConfig(**meta["train"])

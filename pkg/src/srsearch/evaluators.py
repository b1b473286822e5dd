"""Measurement sources: a deterministic surrogate and a wire-protocol client.

The surrogate maps an architecture to a reconstruction-quality score that is
additive over edge ops plus a concave position bonus peaking at L-2, then
anchors it affinely onto a dB range.  Its optimum is known by construction
(every edge at the top-scored op, position at the bonus peak), which is what
makes desk-scale search runs verifiable.  Cost always comes from the
analytic MAC model.

External evaluators are child processes speaking newline-delimited JSON on
stdin/stdout:

    request:  {"id": int, "v": 1, "cmd": "ping"}
              {"id": int, "v": 1, "cmd": "eval", "arch": {...}, "scale": int, "seed": int}
              {"id": int, "v": 1, "cmd": "train", "archs": [{...}], "steps": int}
    response: {"id": int, "ok": bool, "psnr"?: float, "cost"?: float|null,
               "archs"?: int, "error"?: str}

Responses are matched by id, never by order.  A missing psnr on eval, bad
JSON, or a dead process each raise a distinct error type.
"""

from __future__ import annotations

import hashlib
import json
import selectors
import subprocess
import shlex
import time
from dataclasses import dataclass, field

import numpy as np

from .cost import CostConfig, TensorShape, arch_flops
from .space import ArchSpec, NormalOp, SpaceConfig, UpsampleOp, arch_to_json, arch_to_tokens

PROTOCOL_VERSION = 1

SEARCH_EVAL_SHAPE = TensorShape(3, 48, 48)  # desk-scale stand-in for 3x480x480


class EvaluatorError(Exception):
    """Base for everything the evaluator boundary can raise."""


class EvaluatorTimeout(EvaluatorError):
    pass


class MalformedResponse(EvaluatorError):
    pass


class EvaluatorFailure(EvaluatorError):
    """The evaluator answered ok=false."""


class TransportError(EvaluatorError):
    """Endpoint process died or streams closed."""


@dataclass
class Measurement:
    psnr: float
    cost: int  # absolute multiply-add count
    meta: dict = field(default_factory=dict)

    @property
    def cost_gmacs(self) -> float:
        return self.cost / 1e9


def _default_normal_scores() -> dict:
    # ranking: rcab >= udpb > 5x5 convs > 3x3 convs > identity; gaps sized so
    # the per-edge quality/cost marginal crosses the (1-lam)/lam selection
    # threshold between lam 0.2/0.6 (identity vs mid ops) and 0.6/0.9 (mid
    # ops vs rcab), given that one cell spec instantiates ~L-1 times
    return {
        NormalOp.IDENTITY.value: 0.0,
        NormalOp.DIL_CONV_3X3.value: 0.5,
        NormalOp.DIL_CONV_5X5.value: 1.0,
        NormalOp.SEP_CONV_3X3.value: 0.5,
        NormalOp.SEP_CONV_5X5.value: 1.0,
        NormalOp.UDPB.value: 2.0,
        NormalOp.RCAB.value: 2.8,
    }


def _default_upsample_scores() -> dict:
    return {
        UpsampleOp.AREA.value: 0.4,
        UpsampleOp.BILINEAR.value: 0.6,
        UpsampleOp.NEAREST.value: 0.2,
        UpsampleOp.SUB_PIXEL.value: 1.6,
        UpsampleOp.DECONV.value: 1.2,
    }


@dataclass
class SurrogateConfig:
    normal_scores: dict = field(default_factory=_default_normal_scores)
    upsample_scores: dict = field(default_factory=_default_upsample_scores)
    bonus_weight: float = 0.3  # position bonus curvature around the peak
    bonus_cap: float = 9.0  # clamp on (position - peak)^2, bounds the span
    noise_db: float = 0.0
    psnr_lo: float = 28.0
    psnr_hi: float = 40.0

    def position_bonus(self, position: int, depth: int) -> float:
        """Concave around the peak at depth - 2 (late but not last), flat
        beyond the clamp.  Strong enough to pull quality-heavy runs off the
        cheapest (last) position without dominating the op scores."""
        peak = max(depth - 2, 1)
        return -self.bonus_weight * min((position - peak) ** 2, self.bonus_cap)

    def top_normal_op(self) -> str:
        return max(self.normal_scores, key=self.normal_scores.get)

    def top_upsample_op(self) -> str:
        return max(self.upsample_scores, key=self.upsample_scores.get)


def _quality(arch: ArchSpec, sc: SurrogateConfig) -> float:
    q = 0.0
    for _t, _src, op, _slot in arch.normal_cell.edges():
        q += sc.normal_scores[list(NormalOp)[op].value]
    for _t, _src, op, _slot in arch.upsample_cell.edges():
        q += sc.upsample_scores[list(UpsampleOp)[op].value]
    q += sc.position_bonus(arch.position, arch.depth)
    return q


def quality_bounds(sc: SurrogateConfig, space: SpaceConfig) -> tuple[float, float]:
    edges = 2 * space.intermediates
    lo = edges * min(sc.normal_scores.values()) + edges * min(sc.upsample_scores.values())
    hi = edges * max(sc.normal_scores.values()) + edges * max(sc.upsample_scores.values())
    bonuses = [sc.position_bonus(p, space.L) for p in range(1, space.L + 1)]
    return lo + min(bonuses), hi + max(bonuses)


def surrogate_psnr(arch: ArchSpec, sc: SurrogateConfig, space: SpaceConfig) -> float:
    lo, hi = quality_bounds(sc, space)
    q = _quality(arch, sc)
    psnr = sc.psnr_lo + (sc.psnr_hi - sc.psnr_lo) * (q - lo) / (hi - lo)
    if sc.noise_db > 0.0:
        # hash-seeded so the noise is a pure function of the arch: parallel-safe
        digest = hashlib.sha256(bytes(arch_to_tokens(arch, space))).digest()
        noise_rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        psnr += sc.noise_db * noise_rng.standard_normal()
    return psnr


def surrogate_evaluate(
    arch: ArchSpec,
    sc: SurrogateConfig,
    space: SpaceConfig,
    cost_cfg: CostConfig,
    shape: TensorShape = SEARCH_EVAL_SHAPE,
) -> Measurement:
    t0 = time.perf_counter()
    psnr = surrogate_psnr(arch, sc, space)
    cost = arch_flops(arch, shape, cost_cfg).total_macs
    return Measurement(psnr, cost, {"evaluator": "surrogate", "wall_s": time.perf_counter() - t0})


def is_planted_family(arch: ArchSpec, sc: SurrogateConfig) -> bool:
    """True when every edge carries its cell kind's top-scored op."""
    top_n = sc.top_normal_op()
    top_u = sc.top_upsample_op()
    normal_ok = all(list(NormalOp)[op].value == top_n for _t, _s, op, _sl in arch.normal_cell.edges())
    up_ok = all(list(UpsampleOp)[op].value == top_u for _t, _s, op, _sl in arch.upsample_cell.edges())
    return normal_ok and up_ok


class SurrogateEvaluator:
    """In-process evaluator: pure, stateless, freely concurrent."""

    name = "surrogate"

    def __init__(
        self,
        space: SpaceConfig,
        sc: SurrogateConfig | None = None,
        cost_cfg: CostConfig | None = None,
        shape: TensorShape = SEARCH_EVAL_SHAPE,
    ):
        self.space = space
        self.sc = sc or SurrogateConfig()
        self.cost_cfg = cost_cfg or CostConfig()
        self.shape = shape

    def evaluate(self, arch: ArchSpec, seed: int = 0) -> Measurement:
        return surrogate_evaluate(arch, self.sc, self.space, self.cost_cfg, self.shape)

    def train_hook(self, archs: list[ArchSpec], steps: int = 1) -> dict:
        return {"ok": True, "archs": len(archs)}

    def close(self) -> None:
        pass


class ExternalEvaluator:
    """Client for a child-process evaluator speaking the NDJSON protocol."""

    name = "external"

    def __init__(
        self,
        command: str | list[str],
        space: SpaceConfig,
        cost_cfg: CostConfig | None = None,
        shape: TensorShape = SEARCH_EVAL_SHAPE,
        scale: int = 2,
        timeout_s: float = 600.0,
    ):
        self.space = space
        self.cost_cfg = cost_cfg or CostConfig()
        self.shape = shape
        self.scale = scale
        self.timeout_s = timeout_s
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._next_id = 1
        self._pending: dict[int, dict] = {}

    # -- transport ---------------------------------------------------------

    def _send(self, obj: dict) -> int:
        req_id = self._next_id
        self._next_id += 1
        obj = {"id": req_id, "v": PROTOCOL_VERSION, **obj}
        if self._proc.poll() is not None:
            raise TransportError(f"evaluator process exited with {self._proc.returncode}")
        try:
            self._proc.stdin.write(json.dumps(obj) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"evaluator stdin closed: {exc}") from exc
        return req_id

    def _read_line(self, deadline: float) -> str:
        sel = selectors.DefaultSelector()
        sel.register(self._proc.stdout, selectors.EVENT_READ)
        try:
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise EvaluatorTimeout(f"no response within {self.timeout_s} s")
                if not sel.select(timeout=min(remaining, 1.0)):
                    if self._proc.poll() is not None:
                        raise TransportError(f"evaluator process exited with {self._proc.returncode}")
                    continue
                line = self._proc.stdout.readline()
                if line == "":
                    raise TransportError("evaluator stdout closed")
                line = line.strip()
                if line:
                    return line
        finally:
            sel.close()

    def _await(self, req_id: int) -> dict:
        if req_id in self._pending:
            return self._pending.pop(req_id)
        deadline = time.monotonic() + self.timeout_s
        while True:
            line = self._read_line(deadline)
            try:
                msg = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedResponse(f"bad JSON from evaluator: {line[:200]!r}") from exc
            if not isinstance(msg, dict) or "id" not in msg or "ok" not in msg:
                raise MalformedResponse(f"response missing id/ok: {line[:200]!r}")
            if msg["id"] == req_id:
                return msg
            self._pending[msg["id"]] = msg

    def _request(self, obj: dict) -> dict:
        msg = self._await(self._send(obj))
        if not msg.get("ok", False):
            raise EvaluatorFailure(str(msg.get("error", "evaluator reported failure")))
        return msg

    # -- protocol ----------------------------------------------------------

    def ping(self) -> None:
        self._request({"cmd": "ping"})

    def evaluate(self, arch: ArchSpec, seed: int = 0) -> Measurement:
        t0 = time.perf_counter()
        msg = self._request(
            {
                "cmd": "eval",
                "arch": json.loads(arch_to_json(arch, self.space)),
                "scale": self.scale,
                "seed": seed,
            }
        )
        if "psnr" not in msg or not isinstance(msg["psnr"], (int, float)):
            raise MalformedResponse(f"eval response missing psnr: {msg!r}")
        cost = msg.get("cost")
        if cost is None:
            cost = arch_flops(arch, self.shape, self.cost_cfg).total_macs
        else:
            cost = int(cost)
        return Measurement(
            float(msg["psnr"]), cost, {"evaluator": "external", "wall_s": time.perf_counter() - t0}
        )

    def train_hook(self, archs: list[ArchSpec], steps: int = 1) -> dict:
        return self._request(
            {
                "cmd": "train",
                "archs": [json.loads(arch_to_json(a, self.space)) for a in archs],
                "steps": steps,
            }
        )

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

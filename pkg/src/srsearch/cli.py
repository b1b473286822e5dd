"""Command-line front door.

Subcommands: search (run the REINFORCE loop), derive (sample candidates from
a checkpointed policy and keep the best), flops (cost report for an arch
file), export (arch file to DOT/JSON).

Exit codes: 0 success, 2 user/config error, 3 evaluator/transport error.
Default output directory comes from SRSEARCH_OUT_DIR (falls back to ./out);
the default seed is 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from .controller import ControllerConfig, ControllerParams
from .cost import CostConfig, TensorShape, arch_flops, format_gmacs
from .evaluators import (
    SEARCH_EVAL_SHAPE,
    EvaluatorError,
    ExternalEvaluator,
    SurrogateConfig,
    SurrogateEvaluator,
)
from .space import (
    ArchValidationError,
    SpaceConfig,
    arch_from_json,
    arch_to_dot,
    arch_to_json,
    cell_to_dot,
    chain_to_dot,
)
from .training import (
    RewardConfig,
    SearchAbort,
    TrainConfig,
    derive,
    init_search_state,
    load_search_checkpoint,
    run_search,
    surrogate_profile,
)

CONFIG_VERSION = 1
DEFAULT_SEED = 0


class ConfigError(ValueError):
    pass


def default_config(lam: float = 0.9, epochs: int = 2000, seed: int = DEFAULT_SEED) -> dict:
    ctrl, rc, tc = surrogate_profile(lam=lam, epochs=epochs, seed=seed)
    return {
        "version": CONFIG_VERSION,
        "seed": seed,
        "space": {"B": 6, "L": 12},
        "controller": {
            "hidden": ctrl.hidden,
            "embed": ctrl.embed,
            "init_scale": ctrl.init_scale,
            "logit_temperature": ctrl.logit_temperature,
            "logit_tanh_clip": ctrl.logit_tanh_clip,
        },
        "cost": {"per_op_channels": 8, "scale": 2},
        "eval_shape": [3, 48, 48],
        "reward": {
            "lambda": rc.lam,
            "psnr_lo": rc.psnr_lo,
            "psnr_hi": rc.psnr_hi,
            "cost_budget_gmacs": rc.cost_budget_gmacs,
            "entropy_weight": rc.entropy_weight,
        },
        "train": {
            "epochs": tc.epochs,
            "lr_max": tc.lr_max,
            "lr_min": tc.lr_min,
            "batch": tc.batch,
            "baseline_decay": tc.baseline_decay,
            "use_baseline": tc.use_baseline,
            "theta_steps_per_epoch": tc.theta_steps_per_epoch,
            "w_archs_per_epoch": tc.w_archs_per_epoch,
            "w_steps_per_epoch": tc.w_steps_per_epoch,
            "checkpoint_every": tc.checkpoint_every,
        },
        "evaluator": "surrogate",
    }


def load_config(path: str | None) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"config {path}: expected a mapping at top level")
    if user.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config {path}: version must be {CONFIG_VERSION}")
    for key, value in user.items():
        if key not in cfg:
            raise ConfigError(f"config {path}: unknown key {key!r}")
        if isinstance(cfg[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config {path}: {key} must be a mapping")
            unknown = set(value) - set(cfg[key])
            if unknown:
                raise ConfigError(f"config {path}: unknown keys under {key}: {sorted(unknown)}")
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


def _configs_from_dict(cfg: dict):
    space = SpaceConfig(B=int(cfg["space"]["B"]), L=int(cfg["space"]["L"]))
    clip = cfg["controller"]["logit_tanh_clip"]
    ctrl = ControllerConfig(
        hidden=int(cfg["controller"]["hidden"]),
        embed=int(cfg["controller"]["embed"]),
        init_scale=float(cfg["controller"]["init_scale"]),
        logit_temperature=float(cfg["controller"]["logit_temperature"]),
        logit_tanh_clip=None if clip is None else float(clip),
    )
    cost = CostConfig(
        per_op_channels=int(cfg["cost"]["per_op_channels"]), scale=int(cfg["cost"]["scale"])
    )
    r = cfg["reward"]
    rc = RewardConfig(
        lam=float(r["lambda"]),
        psnr_lo=float(r["psnr_lo"]),
        psnr_hi=float(r["psnr_hi"]),
        cost_budget_gmacs=float(r["cost_budget_gmacs"]),
        entropy_weight=float(r["entropy_weight"]),
    )
    t = cfg["train"]
    tc = TrainConfig(
        epochs=int(t["epochs"]),
        lr_max=float(t["lr_max"]),
        lr_min=float(t["lr_min"]),
        batch=int(t["batch"]),
        baseline_decay=float(t["baseline_decay"]),
        use_baseline=bool(t["use_baseline"]),
        seed=int(cfg["seed"]),
        theta_steps_per_epoch=int(t["theta_steps_per_epoch"]),
        w_archs_per_epoch=int(t["w_archs_per_epoch"]),
        w_steps_per_epoch=int(t["w_steps_per_epoch"]),
        checkpoint_every=int(t["checkpoint_every"]),
    )
    shape = TensorShape(*(int(x) for x in cfg["eval_shape"]))
    return space, ctrl, cost, rc, tc, shape


def make_evaluator(selector: str, space: SpaceConfig, cost_cfg: CostConfig, shape: TensorShape):
    if selector == "surrogate":
        return SurrogateEvaluator(space, SurrogateConfig(), cost_cfg, shape)
    if selector.startswith("external:"):
        return ExternalEvaluator(selector[len("external:") :], space, cost_cfg, shape)
    raise ConfigError(f"unknown evaluator {selector!r} (use surrogate or external:<command>)")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("SRSEARCH_OUT_DIR") or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_shape(text: str) -> TensorShape:
    parts = text.lower().replace("×", "x").split("x")
    if len(parts) != 3:
        raise ConfigError(f"--shape must be CxHxW, got {text!r}")
    return TensorShape(*(int(p) for p in parts))


# ---------------------------------------------------------------------------
# subcommands


def cmd_search(args) -> int:
    cfg = load_config(args.config)
    if args.lam is not None:
        cfg["reward"]["lambda"] = args.lam
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.epochs is not None:
        cfg["train"]["epochs"] = args.epochs
    if args.evaluator is not None:
        cfg["evaluator"] = args.evaluator

    space, ctrl, cost_cfg, rc, tc, shape = _configs_from_dict(cfg)
    out = _out_dir(args)
    evaluator = make_evaluator(cfg["evaluator"], space, cost_cfg, shape)

    state = init_search_state(space, ctrl, tc.seed)
    ckpt_path = out / "search_state.ckpt"
    try:
        log = run_search(state, evaluator, rc, tc, checkpoint_path=ckpt_path)
    except SearchAbort as exc:
        (out / "reward.csv").write_text(exc.log.to_csv(), encoding="utf-8")
        print(f"error: {exc}", file=sys.stderr)
        return 3
    finally:
        evaluator.close()

    (out / "reward.csv").write_text(log.to_csv(), encoding="utf-8")
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True), encoding="utf-8")
    best = log.best()
    from .space import tokens_to_arch  # local to avoid cycle at module import

    best_arch = tokens_to_arch(best.tokens, space)
    (out / "best_arch.json").write_text(arch_to_json(best_arch, space), encoding="utf-8")
    print(f"search done: {len(log.records)} records, best reward {best.reward:.6g}")
    print(f"artifacts in {out}")
    return 0


def cmd_derive(args) -> int:
    try:
        state, rc, _tc = load_search_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
        return 2
    space = state.params.space
    cost_cfg = CostConfig()
    if args.lam is not None:
        rc.lam = args.lam
    out = _out_dir(args)
    evaluator = make_evaluator(args.evaluator, space, cost_cfg, SEARCH_EVAL_SHAPE)

    rng = np.random.default_rng(args.seed if args.seed is not None else DEFAULT_SEED)
    try:
        best, rows = derive(state.params, evaluator, args.k, rc, rng, parallel=args.parallel)
    except EvaluatorError as exc:
        print(f"error: evaluation failed: {exc}", file=sys.stderr)
        return 3
    finally:
        evaluator.close()

    (out / "best_arch.json").write_text(arch_to_json(best, space), encoding="utf-8")
    (out / "best_normal_cell.dot").write_text(cell_to_dot(best.normal_cell, "normal_cell"), encoding="utf-8")
    (out / "best_upsample_cell.dot").write_text(cell_to_dot(best.upsample_cell, "upsample_cell"), encoding="utf-8")
    (out / "best_network.dot").write_text(chain_to_dot(best), encoding="utf-8")
    lines = ["rank,reward,psnr,cost_gmacs,tokens"]
    for i, row in enumerate(sorted(rows, key=lambda r: -r["reward"])):
        toks = " ".join(str(t) for t in row["tokens"])
        lines.append(f"{i},{row['reward']:.12g},{row['psnr']:.12g},{row['cost'] / 1e9:.12g},{toks}")
    (out / "candidates.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"derived best of {args.k} candidates; artifacts in {out}")
    return 0


def cmd_flops(args) -> int:
    try:
        arch, space = arch_from_json(Path(args.arch).read_text(encoding="utf-8"))
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read arch file: {exc}", file=sys.stderr)
        return 2
    shape = _parse_shape(args.shape)
    cost_cfg = CostConfig(per_op_channels=args.channels)

    report = arch_flops(arch, shape, cost_cfg)
    print(f"{'layer':>5}  {'kind':<9} {'macs':>16}  out_shape")
    for lc in report.per_layer:
        s = lc.out_shape
        print(f"{lc.index:>5}  {lc.kind:<9} {lc.macs:>16,}  {s.channels}x{s.height}x{s.width}")
    print(f"total: {report.total_macs:,} MACs = {format_gmacs(report.total_macs)} G")

    if args.position_sweep:
        print("position sweep (same cells, varying upsampling layer):")
        from .space import ArchSpec

        for p in range(1, arch.depth + 1):
            swept = ArchSpec(arch.normal_cell, arch.upsample_cell, p, arch.depth)
            total = arch_flops(swept, shape, cost_cfg).total_macs
            print(f"  position {p:>2}: {format_gmacs(total)} G")

    if args.json_out:
        Path(args.json_out).write_text(report.to_json(), encoding="utf-8")
    return 0


def cmd_export(args) -> int:
    try:
        arch, space = arch_from_json(Path(args.arch).read_text(encoding="utf-8"))
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read arch file: {exc}", file=sys.stderr)
        return 2
    if args.format == "json":
        text = arch_to_json(arch, space)
    elif args.format == "dot":
        text = arch_to_dot(arch)
    else:
        print(f"error: unknown format {args.format!r}", file=sys.stderr)
        return 2
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srsearch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run an architecture search")
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="reward trade-off override")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--evaluator", default=None, help="surrogate or external:<command>")
    p.add_argument("--out", default=None, help="output directory (default $SRSEARCH_OUT_DIR or ./out)")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("derive", help="sample k candidates from a checkpoint, keep the best")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--evaluator", default="surrogate")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--parallel", type=int, default=1, help="concurrent candidate evaluations")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_derive)

    p = sub.add_parser("flops", help="multiply-add report for an arch JSON file")
    p.add_argument("arch")
    p.add_argument("--shape", default="3x480x480", help="input CxHxW")
    p.add_argument("--channels", type=int, default=64, help="per-op width (derived models use 64)")
    p.add_argument("--position-sweep", action="store_true")
    p.add_argument("--json-out", default=None)
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("export", help="export an arch file as dot or json")
    p.add_argument("arch")
    p.add_argument("--format", choices=["dot", "json"], default="dot")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(fn=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ArchValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EvaluatorError as exc:
        print(f"error: evaluator: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

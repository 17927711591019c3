"""Command-line entry point: ``mblook <subcommand> [--config C] [--seed S] [--out D] [--threads T]``.

Exit codes: 0 success, 1 invalid configuration or missing/incompatible
artifact, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig, parse_config
from .errors import ConfigError, DimensionError, FormatError

log = logging.getLogger("mblook")

DEFAULT_OUT = "mblook_runs"


class ArtifactError(Exception):
    def __init__(self, path):
        self.path = path
        super().__init__(f"missing artifact: {path}")


def _artifact(path: Optional[str], flag: str) -> Path:
    if path is None:
        raise ArtifactError(f"<{flag} not given>")
    p = Path(path)
    if not p.exists():
        raise ArtifactError(p)
    return p


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------- subcommands


def cmd_train_policy(cfg: RunConfig, args) -> None:
    from .ppo import train

    out = _out_dir(cfg)
    res = train(cfg.ppo, cfg.env, cfg.seed, out)
    print(f"policy: {res.policy_path}\nvalue: {res.value_path}\ncurve: {out / 'curve.jsonl'}")


def cmd_collect_data(cfg: RunConfig, args) -> None:
    from .dynamics import collect_transitions

    policy = None if args.uniform else _artifact(args.policy, "--policy")
    out = _out_dir(cfg)
    count = args.count if args.count is not None else cfg.dynamics.transitions
    path = out / "transitions.mbld"
    ds = collect_transitions(policy, cfg.env, count, cfg.dynamics.exploration(), cfg.seed, path)
    print(f"{len(ds)} transitions: {path}")


def cmd_train_dynamics(cfg: RunConfig, args) -> None:
    from .dynamics import TransitionDataset, train_dynamics

    data = _artifact(args.data, "--data")
    out = _out_dir(cfg)
    ds = TransitionDataset.load(data)
    res = train_dynamics(ds, cfg.dynamics.model_spec(), cfg.dynamics.train_config(), cfg.seed, out / "dynamics.mblc")
    _write_json(out / "dynamics_metrics.json", {"metrics": res.metrics.to_dict(), "history": res.history})
    print(f"dynamics: {res.path}")
    print(json.dumps(res.metrics.to_dict(), indent=1, sort_keys=True))


def _run_spec(cfg: RunConfig, args, controller: str):
    from .harness import RunSpec

    need_model = controller != "policy" and cfg.lookahead.model_source != "oracle"
    policy = _artifact(args.policy, "--policy")
    value = _artifact(args.value, "--value") if controller != "policy" else (Path(args.value) if args.value else None)
    dynamics = _artifact(args.dynamics, "--dynamics") if need_model else None
    return RunSpec(
        controller=controller if controller != "both" else "policy",
        policy=policy,
        value=value,
        dynamics=dynamics,
        env=cfg.env,
        lookahead=cfg.lookahead,
        episodes=cfg.eval.episodes,
        seed=cfg.seed,
        deterministic_policy=cfg.eval.deterministic_policy,
        group_size=cfg.eval.group_size,
        record_timing=cfg.eval.record_timing,
    )


def cmd_eval(cfg: RunConfig, args) -> None:
    from .harness import format_summaries, paired_eval, run_eval

    controller = args.controller or cfg.eval.controller
    spec = _run_spec(cfg, args, controller)
    out = _out_dir(cfg)
    if controller == "both":
        res = paired_eval(spec, out / "eval")
        print(format_summaries([r.summary for r in res.values()], list(res)), end="")
    else:
        r = run_eval(replace(spec, controller=controller), out / f"eval_{controller}", controller)
        print(format_summaries([r.summary], [controller]), end="")


def cmd_sweep_density(cfg: RunConfig, args) -> None:
    from .harness import SUMMARY_FIELDS, density_sweep, experiment_rows, format_table

    spec = _run_spec(cfg, args, "lookahead")
    rows = density_sweep(spec, cfg.eval.density_multipliers, _out_dir(cfg))
    print(format_table(experiment_rows(rows, "density_multiplier"), ("density_multiplier", "controller") + SUMMARY_FIELDS), end="")


def cmd_cross_guide(cfg: RunConfig, args) -> None:
    from .harness import cross_guidance, format_summaries

    spec = _run_spec(cfg, args, "lookahead")
    env_b = cfg.env.replace(
        density_multiplier=cfg.eval.cross_density_multiplier, size_multiplier=cfg.eval.cross_size_multiplier
    )
    pair = cross_guidance(spec.policy, spec.value, spec.dynamics, env_b, spec.episodes, spec.seed, cfg.lookahead,
                          _out_dir(cfg), deterministic_policy=spec.deterministic_policy, group_size=spec.group_size,
                          record_timing=spec.record_timing)
    print(format_summaries([r.summary for r in pair.values()], list(pair)), end="")


def cmd_bench(cfg: RunConfig, args) -> None:
    from dataclasses import asdict

    from .harness import COST_FIELDS, benchmark_throughput, format_table

    spec = _run_spec(cfg, args, "lookahead")
    rows = benchmark_throughput(spec, cfg.eval.bench_N, cfg.eval.bench_H, cfg.eval.bench_steps, cfg.eval.bench_warmup,
                                cfg.eval.bench_episodes, _out_dir(cfg))
    print(format_table([asdict(r) for r in rows], COST_FIELDS), end="")


def describe_checkpoint(path) -> str:
    from . import nncore

    ckpt = nncore.load(path)
    lines = [f"kind: {ckpt.kind}", "spec:"]
    lines += ["  " + ln for ln in json.dumps(ckpt.spec, indent=1, sort_keys=True).splitlines()]
    lines.append("params:")
    total = 0
    for name in sorted(ckpt.params):
        arr = ckpt.params[name]
        total += arr.size
        lines.append(f"  {name}: {list(arr.shape)} {arr.dtype}")
    lines.append(f"  total: {total}")
    lines.append("norm_stats:")
    for k in sorted(ckpt.norm_stats):
        v = np.asarray(ckpt.norm_stats[k])
        lines.append(f"  {k}: {np.array2string(v, precision=4, max_line_width=120)}")
    lines.append("meta:")
    lines += ["  " + ln for ln in json.dumps(ckpt.meta, indent=1, sort_keys=True).splitlines()]
    return "\n".join(lines) + "\n"


def cmd_inspect_ckpt(cfg: RunConfig, args) -> None:
    print(describe_checkpoint(_artifact(args.path, "path")), end="")


COMMANDS = {
    "train-policy": cmd_train_policy,
    "collect-data": cmd_collect_data,
    "train-dynamics": cmd_train_dynamics,
    "eval": cmd_eval,
    "sweep-density": cmd_sweep_density,
    "cross-guide": cmd_cross_guide,
    "bench": cmd_bench,
    "inspect-ckpt": cmd_inspect_ckpt,
}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (sections env, ppo, dynamics, lookahead, eval)")
    common.add_argument("--seed", type=int, help="global seed (overrides the file)")
    common.add_argument("--out", help="output directory (overrides the file)")
    common.add_argument("--threads", type=int, help="cap BLAS threads; 1 gives bit-exact reruns")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    artifacts = argparse.ArgumentParser(add_help=False)
    artifacts.add_argument("--policy", help="policy checkpoint")
    artifacts.add_argument("--value", help="value checkpoint")
    artifacts.add_argument("--dynamics", help="dynamics checkpoint")

    p = argparse.ArgumentParser(prog="mblook", description="Model-based lookahead on top of PPO, desk scale.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train-policy", parents=[common], help="train policy and value with PPO")
    c = sub.add_parser("collect-data", parents=[common], help="record a transition dataset")
    c.add_argument("--policy", help="exploration policy checkpoint")
    c.add_argument("--uniform", action="store_true", help="uniform random actions instead of a policy")
    c.add_argument("--count", type=int, help="number of transitions (default dynamics.transitions)")
    d = sub.add_parser("train-dynamics", parents=[common], help="fit a one-step dynamics model")
    d.add_argument("--data", help="transition dataset file")
    e = sub.add_parser("eval", parents=[common, artifacts], help="evaluate a controller")
    e.add_argument("--controller", choices=("policy", "lookahead", "both"))
    sub.add_parser("sweep-density", parents=[common, artifacts], help="both controllers over density multipliers")
    sub.add_parser("cross-guide", parents=[common, artifacts], help="guide a policy on a modified task")
    sub.add_parser("bench", parents=[common, artifacts], help="single-env throughput and cost per success")
    i = sub.add_parser("inspect-ckpt", parents=[common], help="print a checkpoint's contents")
    i.add_argument("path")
    return p


def _threads(n: Optional[int]):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        cfg = parse_config(args.config) if args.config else RunConfig()
        cfg = cfg.override(seed=args.seed, out=args.out)
    except ConfigError as exc:
        log.error("invalid configuration: %s", exc)
        return 1
    try:
        with _threads(args.threads):
            COMMANDS[args.command](cfg, args)
    except ArtifactError as exc:
        log.error("%s", exc)
        return 1
    except (ConfigError, DimensionError, FormatError) as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("failed: %s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

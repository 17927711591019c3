"""Evaluation harness: paired-seed comparisons, density sweeps, cross-task guidance, throughput.

Episode ``i`` of an evaluation with base seed ``b`` uses seed ``b + i``; its
environment and action generators are derived from that seed under fixed
names, so two controllers evaluated with the same base seed see identical
initial states and goal sequences.  Episodes run in lockstep groups, each
with its own generators, which keeps the numbers independent of the group
size except for floating-point effects of batched matrix products.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import nncore
from .dynamics import DynamicsModel, OracleModel
from .envs import EnvConfig, EnvState, VecEnv, layout_for, new_state, step_batch
from .errors import ConfigError, DimensionError, InputError
from .lookahead import EnvTask, LookaheadConfig, LookaheadController
from .ppo import GaussianPolicy, ValueFunction
from .seeding import derive_rng, episode_seed

log = logging.getLogger(__name__)

DEFAULT_MULTIPLIERS = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
CONTROLLERS = ("policy", "lookahead")


# ---------------------------------------------------------------- records


@dataclass
class EpisodeRecord:
    index: int
    seed: int
    reward: float
    successes: int
    length: int
    fell: bool
    wall_time: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)


@dataclass
class MetricsSummary:
    """Aggregate of one evaluation; field order is the CSV column order."""

    average_reward: float
    average_reward_se: Optional[float]
    consecutive_successes: float
    average_episode_length: float
    timesteps_per_success: Optional[float]
    runtime_per_success: Optional[float]
    episodes: int
    wall_clock: Optional[float]
    steps_per_second: Optional[float]

    @classmethod
    def from_records(cls, records: Sequence[EpisodeRecord], wall_clock: Optional[float]) -> "MetricsSummary":
        if not records:
            raise InputError("at least one episode is needed for a summary")
        rewards = np.array([r.reward for r in records], dtype=np.float64)
        n = len(records)
        se = float(np.std(rewards, ddof=1) / math.sqrt(n)) if n > 1 else None
        steps = int(sum(r.length for r in records))
        succ = int(sum(r.successes for r in records))
        sps = steps / wall_clock if wall_clock else None
        return cls(
            average_reward=float(rewards.mean()),
            average_reward_se=se,
            consecutive_successes=succ / n,
            average_episode_length=steps / n,
            timesteps_per_success=(steps / succ) if succ else None,
            runtime_per_success=(wall_clock / succ) if (succ and wall_clock is not None) else None,
            episodes=n,
            wall_clock=wall_clock,
            steps_per_second=sps,
        )

    def to_dict(self) -> dict:
        return asdict(self)


SUMMARY_FIELDS = tuple(f.name for f in fields(MetricsSummary))


@dataclass
class EvalResult:
    records: list
    summary: MetricsSummary
    label: str = ""


def read_records(path) -> list:
    with open(path) as fh:
        return [EpisodeRecord(**json.loads(line)) for line in fh if line.strip()]


def write_records(path, records: Sequence[EpisodeRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


# ---------------------------------------------------------------- controllers


class PolicyController:
    """The policy alone: its mean action, or one sample per decision from that episode's generator."""

    def __init__(self, policy: GaussianPolicy, deterministic: bool = True):
        self.policy = policy
        self.deterministic = deterministic

    def __call__(self, state, obs, rngs) -> np.ndarray:
        if self.deterministic:
            mean, _ = self.policy.distribution(obs)
            return mean.astype(np.float32)
        return self.policy.sample_actions(obs[:, None, :], rngs)[:, 0]


def _subset(state: EnvState, keep: np.ndarray) -> EnvState:
    return EnvState(
        state.physical[keep], state.goal[keep], state.prev_action[keep], state.steps[keep], state.successes[keep],
        [state.rngs[i] for i in keep],
    )


def run_episodes(
    controller: Callable,
    env_cfg: EnvConfig,
    episodes: int,
    seed: int,
    group_size: int = 16,
    record_timing: bool = True,
) -> EvalResult:
    """Run ``episodes`` full episodes with ``controller(state, obs, rngs) -> actions``.

    Wall-clock covers the stepping loop only.  With ``record_timing`` off all
    timing fields are None, making the result a pure function of the inputs.
    """
    if not isinstance(episodes, int) or episodes < 1:
        raise InputError(f"episodes must be a positive integer, got {episodes!r}")
    if group_size < 1:
        raise InputError("group_size must be >= 1")
    lay = layout_for(env_cfg)
    records: list[EpisodeRecord] = []
    total_wall = 0.0
    for start in range(0, episodes, group_size):
        idx = list(range(start, min(episodes, start + group_size)))
        seeds = [episode_seed(seed, i) for i in idx]
        env_rngs = [derive_rng(s, "episode", "env") for s in seeds]
        act_rngs = [derive_rng(s, "episode", "actions") for s in seeds]
        state = new_state(env_cfg, env_rngs)
        rows = np.arange(len(idx))
        returns = np.zeros(len(idx))
        goal_events = np.zeros(len(idx), dtype=np.int64)
        finished: dict[int, EpisodeRecord] = {}
        t0 = time.perf_counter()
        while rows.size:
            obs = lay.observe(state.physical, state.goal, state.prev_action)
            actions = controller(state, obs, [act_rngs[i] for i in rows])
            res = step_batch(state, actions, env_cfg)
            returns[rows] += res.reward.astype(np.float64)
            goal_events[rows] += res.info["goal_reached"]
            done = res.terminated | res.truncated
            if np.any(done):
                now = time.perf_counter() - t0
                for j in np.flatnonzero(done):
                    i = int(rows[j])
                    if int(state.successes[j]) != int(goal_events[i]):
                        raise AssertionError("success counter disagrees with goal events")
                    finished[i] = EpisodeRecord(
                        index=idx[i], seed=seeds[i], reward=float(returns[i]), successes=int(state.successes[j]),
                        length=int(state.steps[j]), fell=bool(res.terminated[j]),
                        wall_time=now if record_timing else None,
                    )
                keep = np.flatnonzero(~done)
                state = _subset(state, keep)
                rows = rows[keep]
        total_wall += time.perf_counter() - t0
        records += [finished[i] for i in range(len(idx))]
    summary = MetricsSummary.from_records(records, total_wall if record_timing else None)
    return EvalResult(records, summary)


# ---------------------------------------------------------------- run specs


@dataclass
class RunSpec:
    """One evaluation: which controller, which artifacts, which environment."""

    controller: str = "policy"
    policy: Union[str, Path, GaussianPolicy, None] = None
    value: Union[str, Path, ValueFunction, None] = None
    dynamics: Union[str, Path, DynamicsModel, None] = None  # "oracle" selects the simulator
    env: EnvConfig = field(default_factory=EnvConfig)
    env_overrides: dict = field(default_factory=dict)
    lookahead: LookaheadConfig = field(default_factory=LookaheadConfig)
    episodes: int = 200
    seed: int = 0
    deterministic_policy: bool = True
    group_size: int = 16
    record_timing: bool = True

    def env_config(self) -> EnvConfig:
        return self.env.replace(**self.env_overrides) if self.env_overrides else self.env

    def validate(self) -> None:
        if self.controller not in CONTROLLERS:
            raise ConfigError("eval.controller", f"must be one of {CONTROLLERS}")
        if self.policy is None:
            raise ConfigError("eval.policy", "a policy checkpoint is required")
        if self.controller == "lookahead":
            if self.value is None:
                raise ConfigError("eval.value", "the lookahead controller needs a value checkpoint")
            if self.dynamics is None and self.lookahead.model_source != "oracle":
                raise ConfigError("eval.dynamics", "the lookahead controller needs a dynamics checkpoint or model_source=oracle")
        if not isinstance(self.episodes, int) or self.episodes < 1:
            raise ConfigError("eval.episodes", "must be a positive integer")
        self.env_config()


def _load(obj, cls):
    if obj is None or isinstance(obj, cls):
        return obj
    ckpt = obj if isinstance(obj, nncore.Checkpoint) else nncore.load(obj)
    return cls.from_checkpoint(ckpt)


def check_layouts(env_cfg: EnvConfig, policy=None, value=None, model=None) -> None:
    """Raise :class:`DimensionError` if any artifact disagrees with the environment layout."""
    lay = layout_for(env_cfg)
    if policy is not None and (policy.obs_dim != lay.obs_dim or policy.action_dim != lay.action_dim):
        raise DimensionError(
            f"policy has obs/action dims {policy.obs_dim}/{policy.action_dim}, "
            f"{env_cfg.env_kind}/{env_cfg.actuation} needs {lay.obs_dim}/{lay.action_dim}"
        )
    if value is not None and value.spec.input_dim != lay.obs_dim:
        raise DimensionError(f"value network takes {value.spec.input_dim} inputs, observation has {lay.obs_dim}")
    if isinstance(model, DynamicsModel):
        ml = model.meta.get("layout", {})
        if (ml.get("env_kind"), ml.get("actuation")) != (env_cfg.env_kind, env_cfg.actuation) or (
            model.fmap.state_dim,
            model.fmap.action_dim,
        ) != (lay.state_dim, lay.action_dim):
            raise DimensionError(
                f"dynamics model was trained on {ml.get('env_kind')}/{ml.get('actuation')}, "
                f"environment is {env_cfg.env_kind}/{env_cfg.actuation}"
            )


def build_controller(spec: RunSpec):
    spec.validate()
    cfg = spec.env_config()
    policy = _load(spec.policy, GaussianPolicy)
    if spec.controller == "policy":
        check_layouts(cfg, policy)
        return PolicyController(policy, spec.deterministic_policy)
    value = _load(spec.value, ValueFunction)
    if spec.lookahead.model_source == "oracle" or spec.dynamics == "oracle":
        model = OracleModel(cfg)
    else:
        model = _load(spec.dynamics, DynamicsModel)
    check_layouts(cfg, policy, value, model)
    return LookaheadController(policy, value, model, spec.lookahead, EnvTask(cfg))


def run_eval(spec: RunSpec, out_dir=None, label: str = "") -> EvalResult:
    """Evaluate one controller; optionally writes ``episodes.jsonl`` and ``summary.csv`` to ``out_dir``."""
    controller = build_controller(spec)
    res = run_episodes(controller, spec.env_config(), spec.episodes, spec.seed, spec.group_size, spec.record_timing)
    res.label = label or spec.controller
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records(out / "episodes.jsonl", res.records)
        write_summary_csv(out / "summary.csv", [res.summary], [res.label])
    log.info("%s: reward %.3f successes %.2f length %.1f", res.label, res.summary.average_reward,
             res.summary.consecutive_successes, res.summary.average_episode_length)
    return res


def paired_eval(spec: RunSpec, out_dir=None) -> dict:
    """Policy and lookahead on the same seeds; returns ``{"policy": EvalResult, "lookahead": EvalResult}``."""
    out = Path(out_dir) if out_dir is not None else None
    results = {}
    for ctrl in CONTROLLERS:
        s = replace(spec, controller=ctrl)
        results[ctrl] = run_eval(s, out / ctrl if out is not None else None, ctrl)
    if out is not None:
        write_summary_csv(out / "comparison.csv", [r.summary for r in results.values()], list(results))
        (out / "comparison.txt").write_text(format_summaries([r.summary for r in results.values()], list(results)))
    return results


def paired_differences(a: EvalResult, b: EvalResult, attr: str = "reward") -> np.ndarray:
    """Per-episode ``b - a`` for two evaluations over the same seeds."""
    if [r.seed for r in a.records] != [r.seed for r in b.records]:
        raise InputError("evaluations are not paired: episode seeds differ")
    return np.array([getattr(y, attr) - getattr(x, attr) for x, y in zip(a.records, b.records)], dtype=np.float64)


def paired_confidence_interval(diff: np.ndarray, z: float = 1.96) -> tuple[float, float]:
    """Normal-approximation interval for the mean of paired differences."""
    n = diff.size
    m = float(diff.mean())
    if n < 2:
        return m, m
    half = z * float(diff.std(ddof=1)) / math.sqrt(n)
    return m - half, m + half


# ---------------------------------------------------------------- experiments


def density_sweep(spec: RunSpec, multipliers=DEFAULT_MULTIPLIERS, out_dir=None) -> list:
    """Both controllers at every density multiplier, same seeds, same checkpoints.

    Returns rows ``{"density_multiplier", "policy", "lookahead"}`` of summaries.
    """
    if not multipliers or any(not (m > 0) for m in multipliers):
        raise ConfigError("eval.density_multipliers", "multipliers must be positive")
    rows = []
    for m in multipliers:
        overrides = dict(spec.env_overrides, density_multiplier=float(m))
        pair = paired_eval(replace(spec, env_overrides=overrides))
        rows.append({"density_multiplier": float(m), "policy": pair["policy"], "lookahead": pair["lookahead"]})
    if out_dir is not None:
        write_experiment(out_dir, "density_sweep", rows, "density_multiplier")
    return rows


def cross_guidance(
    policy_a, value_a, dynamics_b, env_b: EnvConfig, episodes: int = 200, seed: int = 0,
    lookahead: LookaheadConfig = LookaheadConfig(), out_dir=None, **spec_kwargs,
) -> dict:
    """Policy trained on task A, guided on task B by task B's dynamics model."""
    spec = RunSpec(policy=policy_a, value=value_a, dynamics=dynamics_b, env=env_b, episodes=episodes, seed=seed,
                   lookahead=lookahead, **spec_kwargs)
    pair = paired_eval(spec)
    if out_dir is not None:
        write_experiment(out_dir, "cross_guidance", [{"env": env_b.config_hash(), **pair}], "env")
    return pair


@dataclass
class CostRow:
    controller: str
    N: Optional[int]
    H: Optional[int]
    steps_per_second: float
    timesteps_per_success: Optional[float]
    runtime_per_success: Optional[float]
    successes: int


COST_FIELDS = tuple(f.name for f in fields(CostRow))


def measure_steps_per_second(controller, env_cfg: EnvConfig, steps: int, warmup: int = 100, seed: int = 0) -> float:
    """Single-environment control loop rate, warm-up steps excluded."""
    env = VecEnv(env_cfg, [derive_rng(seed, "bench", "env")])
    rngs = [derive_rng(seed, "bench", "actions")]
    obs = env.observe()
    for _ in range(warmup):
        obs = env.step(controller(env.state, obs, rngs), auto_reset=True).observation
    t0 = time.perf_counter()
    for _ in range(steps):
        obs = env.step(controller(env.state, obs, rngs), auto_reset=True).observation
    return steps / (time.perf_counter() - t0)


def benchmark_throughput(
    spec: RunSpec, Ns=(64, 1024), Hs=(1, 2), steps: int = 300, warmup: int = 100, episodes: Optional[int] = None,
    out_dir=None,
) -> list:
    """Cost table: policy alone plus the lookahead at every ``(N, H)``.

    Runtime per success is timesteps per success (from a run_eval over
    ``episodes``) divided by the measured single-env steps per second.
    """
    episodes = spec.episodes if episodes is None else episodes
    configs = [("policy", None, None)] + [("lookahead", n, h) for n in Ns for h in Hs]
    rows = []
    for ctrl, n, h in configs:
        s = replace(spec, controller=ctrl, episodes=episodes)
        if ctrl == "lookahead":
            s = replace(s, lookahead=replace(spec.lookahead, N=int(n), H=int(h), E=min(spec.lookahead.E, int(n))))
        controller = build_controller(s)
        sps = measure_steps_per_second(controller, s.env_config(), steps, warmup, spec.seed)
        ev = run_episodes(controller, s.env_config(), s.episodes, s.seed, s.group_size, record_timing=False)
        tps = ev.summary.timesteps_per_success
        succ = int(sum(r.successes for r in ev.records))
        rows.append(CostRow(ctrl, n, h, sps, tps, (tps / sps) if tps is not None else None, succ))
        log.info("bench %s N=%s H=%s: %.1f steps/s", ctrl, n, h, sps)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dicts = [asdict(r) for r in rows]
        (out / "bench.csv").write_text(to_csv(dicts, COST_FIELDS))
        (out / "bench.txt").write_text(format_table(dicts, COST_FIELDS))
    return rows


# ---------------------------------------------------------------- tables


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def format_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    """Aligned plain-text table; floats shown with 4 significant decimals."""

    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4g}" if abs(v) >= 1e4 or (v != 0 and abs(v) < 1e-3) else f"{v:.4f}"
        return str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"


def write_summary_csv(path, summaries: Sequence[MetricsSummary], labels: Sequence[str]) -> None:
    rows = [{"controller": lab, **s.to_dict()} for s, lab in zip(summaries, labels)]
    Path(path).write_text(to_csv(rows, ("controller",) + SUMMARY_FIELDS))


def format_summaries(summaries: Sequence[MetricsSummary], labels: Sequence[str]) -> str:
    rows = [{"controller": lab, **s.to_dict()} for s, lab in zip(summaries, labels)]
    return format_table(rows, ("controller",) + SUMMARY_FIELDS)


def experiment_rows(rows: Sequence[dict], key: str) -> list:
    """Flatten ``{key, policy: EvalResult, lookahead: EvalResult}`` rows to one dict per controller."""
    flat = []
    for r in rows:
        for ctrl in CONTROLLERS:
            flat.append({key: r[key], "controller": ctrl, **r[ctrl].summary.to_dict()})
    return flat


def write_experiment(out_dir, name: str, rows: Sequence[dict], key: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    flat = experiment_rows(rows, key)
    cols = (key, "controller") + SUMMARY_FIELDS
    (out / f"{name}.csv").write_text(to_csv(flat, cols))
    (out / f"{name}.txt").write_text(format_table(flat, cols))
    for r in rows:
        for ctrl in CONTROLLERS:
            write_records(out / f"{name}_{_fmt(r[key])}_{ctrl}.jsonl", r[ctrl].records)

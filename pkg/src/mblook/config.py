"""Run configuration: one YAML file with sections env, ppo, dynamics, lookahead and eval."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .dynamics import DynModelSpec, DynTrainConfig, ExplorationConfig
from .envs import EnvConfig
from .errors import ConfigError
from .harness import DEFAULT_MULTIPLIERS
from .lookahead import LookaheadConfig
from .ppo import PpoConfig

log = logging.getLogger(__name__)


def _check_keys(d: dict, cls, prefix: str) -> None:
    names = {f.name for f in fields(cls)}
    for k in d:
        if k not in names:
            raise ConfigError(f"{prefix}.{k}", "unknown key")


def _build(cls, d: dict, prefix: str):
    _check_keys(d, cls, prefix)
    try:
        return cls(**d)
    except ConfigError as exc:
        # module configs prefix their keys themselves; keep the message, fix the section
        key = exc.key.split(".", 1)[-1]
        raise ConfigError(f"{prefix}.{key}", str(exc).split(": ", 1)[-1]) from None
    except TypeError as exc:
        raise ConfigError(prefix, str(exc)) from None


@dataclass(frozen=True)
class DynamicsSection:
    transitions: int = 100_000
    epsilon_uniform: float = 0.1
    collect_envs: int = 16
    test_fraction: float = 0.1
    variant: str = "monolithic"
    hidden: tuple = (64, 64)
    dropout: float = 0.2
    joint_hidden: tuple = (16,)
    joint_features: int = 2
    shared_joint_weights: bool = True
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    patience: int = 5
    joint_loss_weight: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "joint_hidden", tuple(self.joint_hidden))
        if not isinstance(self.transitions, int) or self.transitions < 1:
            raise ConfigError("dynamics.transitions", "must be a positive integer")
        self.exploration()
        self.model_spec()
        self.train_config()

    def exploration(self) -> ExplorationConfig:
        return ExplorationConfig(self.epsilon_uniform, self.collect_envs, self.test_fraction)

    def model_spec(self) -> DynModelSpec:
        return DynModelSpec(self.variant, self.hidden, self.dropout, self.joint_hidden, self.joint_features,
                            self.shared_joint_weights)

    def train_config(self) -> DynTrainConfig:
        return DynTrainConfig(self.learning_rate, self.batch_size, self.epochs, self.patience, self.joint_loss_weight)


@dataclass(frozen=True)
class EvalSection:
    episodes: int = 200
    controller: str = "policy"
    deterministic_policy: bool = True
    group_size: int = 16
    record_timing: bool = True
    density_multipliers: tuple = DEFAULT_MULTIPLIERS
    cross_density_multiplier: float = 1.0
    cross_size_multiplier: float = 1.25
    bench_N: tuple = (64, 1024)
    bench_H: tuple = (1, 2)
    bench_steps: int = 300
    bench_warmup: int = 100
    bench_episodes: int = 20

    def __post_init__(self):
        for k in ("density_multipliers", "bench_N", "bench_H"):
            object.__setattr__(self, k, tuple(getattr(self, k)))
        if self.controller not in ("policy", "lookahead"):
            raise ConfigError("eval.controller", "must be policy or lookahead")
        for k in ("episodes", "group_size", "bench_steps", "bench_episodes"):
            v = getattr(self, k)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"eval.{k}", "must be a positive integer")
        if not isinstance(self.bench_warmup, int) or self.bench_warmup < 0:
            raise ConfigError("eval.bench_warmup", "must be a non-negative integer")
        if not self.density_multipliers or any(not (m > 0) for m in self.density_multipliers):
            raise ConfigError("eval.density_multipliers", "multipliers must be positive")
        if any(not isinstance(n, int) or n < 1 for n in self.bench_N):
            raise ConfigError("eval.bench_N", "entries must be positive integers")
        if any(not isinstance(h, int) or h < 1 for h in self.bench_H):
            raise ConfigError("eval.bench_H", "entries must be positive integers")
        for k in ("cross_density_multiplier", "cross_size_multiplier"):
            if not getattr(self, k) > 0:
                raise ConfigError(f"eval.{k}", "must be > 0")


SECTIONS = {
    "env": EnvConfig,
    "ppo": PpoConfig,
    "dynamics": DynamicsSection,
    "lookahead": LookaheadConfig,
    "eval": EvalSection,
}


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    lookahead: LookaheadConfig = field(default_factory=LookaheadConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    out: Optional[str] = None

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "RunConfig":
        d = dict(d or {})
        for k in d:
            if k not in SECTIONS and k not in ("seed", "out"):
                raise ConfigError(k, "unknown key")
        kwargs: dict[str, Any] = {}
        for name, section in SECTIONS.items():
            body = d.get(name) or {}
            if not isinstance(body, dict):
                raise ConfigError(name, "section must be a mapping")
            kwargs[name] = _build(section, body, name)
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed", "must be a non-negative integer")
        out = d.get("out")
        if out is not None and not isinstance(out, str):
            raise ConfigError("out", "must be a path string")
        return cls(seed=seed, out=out, **kwargs)

    def to_dict(self) -> dict:
        return {
            "env": self.env.to_dict(),
            "ppo": self.ppo.to_dict(),
            "dynamics": _plain(asdict(self.dynamics)),
            "lookahead": self.lookahead.to_dict(),
            "eval": _plain(asdict(self.eval)),
            "seed": self.seed,
            "out": self.out,
        }

    def override(self, seed: Optional[int] = None, out: Optional[str] = None) -> "RunConfig":
        d = self.to_dict()
        if seed is not None:
            d["seed"] = seed
        if out is not None:
            d["out"] = out
        return RunConfig.from_dict(d)


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _log_defaults(raw: dict) -> None:
    defaults = RunConfig().to_dict()
    for section in SECTIONS:
        given = (raw.get(section) or {}) if isinstance(raw.get(section), dict) else {}
        for key, value in defaults[section].items():
            if key not in given:
                log.info("default %s.%s = %r", section, key, value)
    if "seed" not in raw:
        log.info("default seed = 0")


def parse_config(path) -> RunConfig:
    """Read, default-fill and validate a run configuration file.

    Errors name the offending key (``lookahead.E``) or, for malformed YAML,
    the line (``line 3``).
    """
    p = Path(path)
    if not p.exists():
        raise ConfigError("config", f"file not found: {p}")
    text = p.read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else 0
        raise ConfigError(f"line {line}", exc.problem or str(exc)) from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", str(exc)) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping of sections")
    cfg = RunConfig.from_dict(raw)
    _log_defaults(raw)
    return cfg

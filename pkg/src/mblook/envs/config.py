from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ConfigError

ENV_KINDS = ("goal_pendulum", "planar_hand")
ACTUATIONS = ("fully_actuated", "under_actuated")


def _tuple(x):
    return tuple(tuple(r) if isinstance(r, (list, tuple)) else r for r in x)


@dataclass(frozen=True)
class EnvConfig:
    """Every knob of both desk environments.

    Units: seconds, metres, radians, newtons.  Per-joint tuples have one entry
    per planar-hand joint (index/thumb finger, base joint first).
    """

    env_kind: str = "goal_pendulum"
    actuation: str = "fully_actuated"
    dt: float = 1.0 / 60.0
    substeps: int = 4
    max_episode_steps: int = 600
    goal_tolerance: float = 0.1
    fall_distance: float = 0.1
    density_multiplier: float = 1.0
    size_multiplier: float = 1.0

    rot_weight: float = 1.0
    goal_bonus: float = 250.0
    fall_penalty: float = 5.0
    action_l2_weight: float = 0.01
    action_smooth_weight: float = 0.01

    # planar hand, fully actuated
    kp: tuple = (0.5, 0.5, 0.5, 0.5)
    kd: tuple = (0.01, 0.01, 0.01, 0.01)
    # planar hand, under actuated: tau = K (S a - q) - D qdot
    tendon_stiffness: tuple = (0.5, 0.5, 0.5, 0.5)
    tendon_synergy: tuple = ((1.0, 0.0), (0.7, 0.0), (0.0, 1.0), (0.0, 0.7))
    tendon_damping: tuple = (0.01, 0.01, 0.01, 0.01)
    joint_lower: tuple = (-0.6, 0.0, -0.6, 0.0)
    joint_upper: tuple = (1.2, 1.6, 1.2, 1.6)
    torque_limit: tuple = (0.2, 0.2, 0.2, 0.2)

    # goal pendulum
    pendulum_mass: float = 0.25
    pendulum_length: float = 1.0
    pendulum_damping: float = 0.05
    pendulum_torque_limit: float = 3.0

    def __post_init__(self):
        for f in ("kp", "kd", "tendon_stiffness", "tendon_synergy", "tendon_damping", "joint_lower", "joint_upper", "torque_limit"):
            object.__setattr__(self, f, _tuple(getattr(self, f)))
        self.validate()

    def validate(self, prefix: str = "env") -> None:
        def bad(key, msg):
            raise ConfigError(f"{prefix}.{key}", msg)

        if self.env_kind not in ENV_KINDS:
            bad("env_kind", f"must be one of {ENV_KINDS}")
        if self.actuation not in ACTUATIONS:
            bad("actuation", f"must be one of {ACTUATIONS}")
        if self.env_kind == "goal_pendulum" and self.actuation != "fully_actuated":
            bad("actuation", "goal_pendulum is torque driven and only supports fully_actuated")
        positive = ("dt", "goal_tolerance", "fall_distance", "density_multiplier", "size_multiplier",
                    "pendulum_mass", "pendulum_length", "pendulum_torque_limit")
        for key in positive:
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                bad(key, f"must be a positive finite number, got {v!r}")
        if not isinstance(self.substeps, int) or self.substeps < 1:
            bad("substeps", "must be an integer >= 1")
        if not isinstance(self.max_episode_steps, int) or self.max_episode_steps < 1:
            bad("max_episode_steps", "must be an integer >= 1")
        if self.pendulum_damping < 0:
            bad("pendulum_damping", "must be >= 0")
        for key in ("rot_weight", "goal_bonus", "fall_penalty", "action_l2_weight", "action_smooth_weight"):
            if not math.isfinite(getattr(self, key)):
                bad(key, "must be finite")
        for key in ("kp", "kd", "tendon_stiffness", "tendon_damping", "joint_lower", "joint_upper", "torque_limit"):
            arr = np.asarray(getattr(self, key), dtype=float)
            if arr.shape != (4,) or not np.all(np.isfinite(arr)):
                bad(key, "needs 4 finite entries")
        for key in ("tendon_stiffness", "tendon_damping", "kp", "kd"):
            if np.any(np.asarray(getattr(self, key)) < 0):
                bad(key, "entries must be >= 0")
        if np.any(np.asarray(self.torque_limit) <= 0):
            bad("torque_limit", "entries must be > 0")
        if np.any(np.asarray(self.joint_lower) >= np.asarray(self.joint_upper)):
            bad("joint_lower", "each lower limit must be below its upper limit")
        syn = np.asarray(self.tendon_synergy, dtype=float)
        if syn.shape != (4, 2) or not np.all(np.isfinite(syn)):
            bad("tendon_synergy", "must be a finite 4x2 matrix (joints x actuators)")

    def replace(self, **changes) -> "EnvConfig":
        d = self.to_dict()
        d.update(changes)
        return EnvConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(r) if isinstance(r, tuple) else r for r in v]
        return d

    @classmethod
    def from_dict(cls, d: dict, prefix: str = "env") -> "EnvConfig":
        names = {f.name for f in fields(cls)}
        for k in d:
            if k not in names:
                raise ConfigError(f"{prefix}.{k}", "unknown key")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

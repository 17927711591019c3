"""Episode logic shared by both environments, in batched (struct-of-arrays) form.

Every environment instance owns its random generator, so a batch of
instances evolves exactly as the same instances stepped one by one.
Physics runs in float32 on the packed physical state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from ..errors import DimensionError, InputError
from . import hand, pendulum
from .common import rot_dist, shaped_reward, wrap_angle
from .config import EnvConfig

_MODULES = {"goal_pendulum": pendulum, "planar_hand": hand}


@dataclass(frozen=True)
class Layout:
    """Frozen description of state, action and observation vectors for one (env_kind, actuation)."""

    env_kind: str
    actuation: str
    state_names: tuple[str, ...]
    state_groups: tuple[str, ...]
    angle_indices: tuple[int, ...]
    orientation_index: int
    joint_pos_indices: tuple[int, ...]
    joint_vel_indices: tuple[int, ...]
    joint_action_map: tuple[tuple[float, ...], ...]
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    obs_dim: int

    @property
    def state_dim(self) -> int:
        return len(self.state_names)

    @property
    def action_dim(self) -> int:
        return len(self.action_low)

    @property
    def module(self):
        return _MODULES[self.env_kind]

    def observe(self, x, goal, prev_action):
        return self.module.observe(x, goal, prev_action)

    def orientation_and_goal(self, obs):
        return self.module.orientation_and_goal(obs)

    def clip_action(self, a):
        lo = np.asarray(self.action_low, dtype=np.float32)
        hi = np.asarray(self.action_high, dtype=np.float32)
        return np.clip(np.asarray(a, dtype=np.float32), lo, hi)

    def to_dict(self) -> dict:
        return {
            "env_kind": self.env_kind,
            "actuation": self.actuation,
            "state_names": list(self.state_names),
            "state_groups": list(self.state_groups),
            "angle_indices": list(self.angle_indices),
            "orientation_index": self.orientation_index,
            "joint_pos_indices": list(self.joint_pos_indices),
            "joint_vel_indices": list(self.joint_vel_indices),
            "joint_action_map": [list(r) for r in self.joint_action_map],
            "action_low": list(self.action_low),
            "action_high": list(self.action_high),
            "obs_dim": self.obs_dim,
        }


@lru_cache(maxsize=64)
def layout_for(cfg: EnvConfig) -> Layout:
    mod = _MODULES[cfg.env_kind]
    lo, hi = mod.action_bounds(cfg)
    obs_dim = pendulum.OBS_DIM if cfg.env_kind == "goal_pendulum" else hand.obs_dim(cfg)
    return Layout(
        cfg.env_kind,
        cfg.actuation,
        tuple(mod.STATE_NAMES),
        tuple(mod.STATE_GROUPS),
        tuple(mod.ANGLE_INDICES),
        int(mod.ORIENTATION_INDEX),
        tuple(mod.JOINT_POS_INDICES),
        tuple(mod.JOINT_VEL_INDICES),
        tuple(tuple(float(v) for v in row) for row in mod.joint_action_map(cfg)),
        tuple(float(v) for v in lo),
        tuple(float(v) for v in hi),
        obs_dim,
    )


@dataclass
class EnvState:
    """Batched environment state; row ``i`` belongs to the instance driven by ``rngs[i]``."""

    physical: np.ndarray
    goal: np.ndarray
    prev_action: np.ndarray
    steps: np.ndarray
    successes: np.ndarray
    rngs: list = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.physical.shape[0]


@dataclass
class StepResult:
    observation: np.ndarray
    reward: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    info: dict


def sample_goal(rng: np.random.Generator, theta: float, tolerance: float) -> np.float32:
    """Uniform goal angle, redrawn until it lies more than ``tolerance`` from ``theta``."""
    while True:
        g = wrap_angle(np.float32(rng.uniform(-np.pi, np.pi)))
        if rot_dist(np.float32(theta), g) > tolerance:
            return g


def _check_action(a: np.ndarray, lay: Layout) -> np.ndarray:
    a = np.asarray(a, dtype=np.float32)
    if a.ndim == 1:
        a = a[None, :]
    if a.shape[-1] != lay.action_dim:
        raise DimensionError(f"action needs {lay.action_dim} entries, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("non-finite action")
    return a


def oracle_step(state_vector, action, cfg: EnvConfig) -> np.ndarray:
    """Side-effect-free physics of one control step: clipped action, then integration.

    Accepts a single packed physical state or a batch of them.
    """
    lay = layout_for(cfg)
    x = np.asarray(state_vector, dtype=np.float32)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.shape[-1] != lay.state_dim:
        raise DimensionError(f"state vector needs {lay.state_dim} entries, got {x.shape}")
    a = _check_action(action, lay)
    if a.shape[0] != x2.shape[0]:
        raise DimensionError("state and action batches differ in length")
    out = lay.module.physics(cfg, x2, lay.clip_action(a))
    return out[0] if single else out


def reset_batch(cfg: EnvConfig, state: EnvState, indices: Sequence[int]) -> None:
    """Re-initialise the given rows in place from their own generators."""
    lay = layout_for(cfg)
    for i in indices:
        rng = state.rngs[i]
        theta = wrap_angle(np.float32(rng.uniform(-np.pi, np.pi)))
        state.physical[i] = lay.module.rest_state(cfg, theta)
        state.goal[i] = sample_goal(rng, theta, cfg.goal_tolerance)
        state.prev_action[i] = 0.0
        state.steps[i] = 0
        state.successes[i] = 0


def new_state(cfg: EnvConfig, rngs: Sequence[np.random.Generator]) -> EnvState:
    lay = layout_for(cfg)
    n = len(rngs)
    state = EnvState(
        physical=np.zeros((n, lay.state_dim), dtype=np.float32),
        goal=np.zeros(n, dtype=np.float32),
        prev_action=np.zeros((n, lay.action_dim), dtype=np.float32),
        steps=np.zeros(n, dtype=np.int64),
        successes=np.zeros(n, dtype=np.int64),
        rngs=list(rngs),
    )
    reset_batch(cfg, state, range(n))
    return state


def observe(cfg: EnvConfig, state: EnvState) -> np.ndarray:
    return layout_for(cfg).observe(state.physical, state.goal, state.prev_action)


def step_batch(state: EnvState, actions, cfg: EnvConfig) -> StepResult:
    """Advance every row one control step, mutating ``state``.

    Order of events: clip, integrate, detect fall and goal, compute reward,
    count and resample reached goals, then flag truncation.
    """
    lay = layout_for(cfg)
    a = lay.clip_action(_check_action(actions, lay))
    if a.shape[0] != state.batch_size:
        raise DimensionError(f"got {a.shape[0]} actions for {state.batch_size} environments")
    x = lay.module.physics(cfg, state.physical, a)
    fell = lay.module.fallen(cfg, x)
    dist = rot_dist(x[:, lay.orientation_index], state.goal)
    reached = dist <= cfg.goal_tolerance
    r = shaped_reward(dist, a, state.prev_action, cfg, reached, fell).astype(np.float32)

    state.physical = x
    state.prev_action = a
    state.steps = state.steps + 1
    state.successes = state.successes + reached
    for i in np.flatnonzero(reached):
        state.goal[i] = sample_goal(state.rngs[i], x[i, lay.orientation_index], cfg.goal_tolerance)
    truncated = (state.steps >= cfg.max_episode_steps) & ~fell
    obs = lay.observe(state.physical, state.goal, state.prev_action)
    info = {"goal_reached": reached, "consecutive_successes": state.successes.copy(), "rot_dist": dist, "fell": fell}
    return StepResult(obs, r, fell, truncated, info)


def reset(cfg: EnvConfig, rng: np.random.Generator) -> tuple[EnvState, np.ndarray]:
    """Fresh single-instance state and its observation."""
    state = new_state(cfg, [rng])
    return state, observe(cfg, state)[0]


def step(state: EnvState, action, cfg: EnvConfig) -> StepResult:
    """Single-instance step; scalars in the result instead of length-1 arrays."""
    res = step_batch(state, np.asarray(action, dtype=np.float32).reshape(1, -1), cfg)
    info = {k: (v[0].item() if isinstance(v, np.ndarray) else v) for k, v in res.info.items()}
    return StepResult(res.observation[0], float(res.reward[0]), bool(res.terminated[0]), bool(res.truncated[0]), info)


class VecEnv:
    """A batch of independent instances with optional automatic reset."""

    def __init__(self, cfg: EnvConfig, rngs: Sequence[np.random.Generator]):
        self.cfg = cfg
        self.layout = layout_for(cfg)
        self.state = new_state(cfg, rngs)

    @property
    def num_envs(self) -> int:
        return self.state.batch_size

    def observe(self) -> np.ndarray:
        return observe(self.cfg, self.state)

    def step(self, actions, auto_reset: bool = False) -> StepResult:
        res = step_batch(self.state, actions, self.cfg)
        if auto_reset:
            done = np.flatnonzero(res.terminated | res.truncated)
            if done.size:
                res.info["final_observation"] = res.observation.copy()
                reset_batch(self.cfg, self.state, done)
                res.observation = self.observe()
        return res

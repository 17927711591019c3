"""Online lookahead controller: imagine N short futures, score them, act on the best.

For every decision the policy is rolled ``H`` steps through a transition
model from the live state, each imagined trajectory is scored by its
discounted reward plus a discounted terminal value, and the first actions
of the ``E`` best trajectories are averaged.

All functions accept either a single decision (state ``(d,)``) or ``M``
decisions at once (states ``(M, d)``, one rng per decision); the ``M x N``
trajectories advance in lockstep so every horizon step is one batched call
of the policy and the model.

Interfaces used here:

* policy: ``sample_actions(obs (M, N, obs_dim), rngs) -> (M, N, A)``
* model: ``model(states (B, d), actions (B, A)) -> next states``
* value: ``value.predict(obs (B, obs_dim)) -> (B,)`` in reward units, or None for zero
* task: ``observe``, ``reward``, ``terminated`` and ``clip_action`` (see :class:`EnvTask`)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .dynamics import OracleModel  # noqa: F401  (re-exported)
from .envs import EnvConfig, layout_for
from .envs.common import rot_dist, shaped_reward
from .errors import ComponentError, ConfigError, DimensionError

MODEL_SOURCES = ("learned", "oracle")


@dataclass(frozen=True)
class LookaheadConfig:
    N: int = 1024
    H: int = 2
    E: int = 2
    gamma: float = 0.99
    model_source: str = "learned"
    terminal_at_H: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self, prefix: str = "lookahead") -> None:
        for key in ("N", "H", "E"):
            v = getattr(self, key)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{prefix}.{key}", f"must be an integer, got {v!r}")
        if self.N < 1:
            raise ConfigError(f"{prefix}.N", "must be >= 1")
        if self.H < 1:
            raise ConfigError(f"{prefix}.H", "must be >= 1")
        if not 1 <= self.E <= self.N:
            raise ConfigError(f"{prefix}.E", f"must satisfy 1 <= E <= N (N={self.N}), got {self.E}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"{prefix}.gamma", "must lie in (0, 1]")
        if self.model_source not in MODEL_SOURCES:
            raise ConfigError(f"{prefix}.model_source", f"must be one of {MODEL_SOURCES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, prefix: str = "lookahead") -> "LookaheadConfig":
        names = {f.name for f in fields(cls)}
        for k in d:
            if k not in names:
                raise ConfigError(f"{prefix}.{k}", "unknown key")
        return cls(**d)


class EnvTask:
    """Reward, termination and observation of an environment, evaluated on imagined states."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.layout = layout_for(cfg)

    def observe(self, states, goal, prev_action):
        return self.layout.observe(states, goal, prev_action)

    def clip_action(self, a):
        return self.layout.clip_action(a)

    def terminated(self, states):
        return self.layout.module.fallen(self.cfg, states)

    def reward(self, states, next_states, action, prev_action, goal):
        dist = rot_dist(next_states[:, self.layout.orientation_index], goal)
        reached = dist <= self.cfg.goal_tolerance
        fell = self.terminated(next_states)
        return shaped_reward(dist, action, prev_action, self.cfg, reached, fell).astype(np.float32)


@dataclass
class TrajectoryBatch:
    """Imagined trajectories; leading axes ``(M, N)`` or just ``(N,)`` for a single decision.

    ``alive[..., h]`` is False once the trajectory has terminated before
    step ``h``; ``final_alive`` covers the terminal value.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    alive: np.ndarray
    final_alive: np.ndarray
    goal: np.ndarray
    prev_action: np.ndarray
    task: object = None
    scores: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return self.rewards.shape[-2]

    @property
    def H(self) -> int:
        return self.rewards.shape[-1]

    def terminal_observations(self, at_H: bool = False) -> np.ndarray:
        """Observations at which the terminal value is read, flattened to ``(M*N, obs_dim)``."""
        s = self.states.reshape((-1,) + self.states.shape[-3:])
        a = self.actions.reshape((-1,) + self.actions.shape[-3:])
        M, N, H1, d = s.shape
        H = H1 - 1
        goal = np.repeat(np.asarray(self.goal, np.float32).reshape(-1), N)
        if at_H:
            state = s[:, :, H - 1]
            prev = a[:, :, H - 2] if H >= 2 else np.broadcast_to(self.prev_action.reshape(M, 1, -1), (M, N, a.shape[-1]))
        else:
            state = s[:, :, H]
            prev = a[:, :, H - 1]
        prev = self.task.clip_action(np.ascontiguousarray(prev).reshape(M * N, -1))
        return self.task.observe(state.reshape(M * N, d), goal, prev)


def _as_rngs(rng, M: int) -> list:
    if isinstance(rng, np.random.Generator):
        rngs = [rng]
    else:
        rngs = list(rng)
    if len(rngs) != M:
        raise DimensionError(f"need one rng per decision: {M} decisions, {len(rngs)} generators")
    return rngs


def sample_trajectories(policy, model, s_t, goal, cfg: LookaheadConfig, rng, task, prev_action=None) -> TrajectoryBatch:
    """Roll ``cfg.N`` trajectories of ``cfg.H`` steps from ``s_t`` through ``model``.

    The goal stays fixed over the horizon and the previous-action chain starts
    from the live ``prev_action``.  ``actions`` keeps the raw policy samples;
    the model, the reward and the action chain see them clipped to the action
    box, as the environment would.  Once a trajectory
    terminates its later rewards and its terminal value are masked out.
    """
    single = np.ndim(s_t) == 1
    s0 = np.atleast_2d(np.asarray(s_t, dtype=np.float32))
    M, d = s0.shape
    g = np.asarray(goal, dtype=np.float32).reshape(M)
    rngs = _as_rngs(rng, M)
    N, H = cfg.N, cfg.H
    if prev_action is None:
        raise DimensionError("prev_action is required (the live previous action)")
    prev0 = np.asarray(prev_action, dtype=np.float32).reshape(M, -1)
    adim = prev0.shape[1]
    states = np.empty((M, N, H + 1, d), np.float32)
    actions = np.empty((M, N, H, adim), np.float32)
    rewards = np.zeros((M, N, H), np.float32)
    alive = np.ones((M, N, H), bool)
    states[:, :, 0] = s0[:, None, :]
    goal_rows = np.repeat(g, N)
    prev = np.repeat(prev0, N, axis=0)
    live = np.ones(M * N, bool)
    for h in range(H):
        cur = states[:, :, h].reshape(M * N, d)
        obs = task.observe(cur, goal_rows, prev).reshape(M, N, -1)
        try:
            a = policy.sample_actions(obs, rngs)
        except Exception as exc:
            raise ComponentError(f"policy failed at horizon step {h}: {exc}") from exc
        raw = np.asarray(a, dtype=np.float32).reshape(M * N, adim)
        a = task.clip_action(raw)
        try:
            nxt = np.asarray(model(cur, a), dtype=np.float32)
        except Exception as exc:
            raise ComponentError(f"model failed at horizon step {h}: {exc}") from exc
        if not np.all(np.isfinite(nxt)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(nxt), axis=1))[0])
            raise FloatingPointError(f"model produced a non-finite state for trajectory {bad % N} at horizon step {h}")
        r = np.asarray(task.reward(cur, nxt, a, prev, goal_rows), dtype=np.float32)
        alive[:, :, h] = live.reshape(M, N)
        rewards[:, :, h] = np.where(live, r, 0.0).reshape(M, N)
        live = live & ~np.asarray(task.terminated(nxt), dtype=bool)
        actions[:, :, h] = raw.reshape(M, N, adim)
        states[:, :, h + 1] = nxt.reshape(M, N, d)
        prev = a
    batch = TrajectoryBatch(states, actions, rewards, alive, live.reshape(M, N), g, prev0, task)
    return _squeeze(batch) if single else batch


def _squeeze(batch: TrajectoryBatch) -> TrajectoryBatch:
    batch.states = batch.states[0]
    batch.actions = batch.actions[0]
    batch.rewards = batch.rewards[0]
    batch.alive = batch.alive[0]
    batch.final_alive = batch.final_alive[0]
    batch.goal = batch.goal[0]
    batch.prev_action = batch.prev_action[0]
    if batch.scores is not None:
        batch.scores = batch.scores[0]
    return batch


def discounted_rewards(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """``sum_h gamma^(h-1) r_h`` along the last axis, accumulated in float64."""
    H = rewards.shape[-1]
    weights = gamma ** np.arange(H, dtype=np.float64)
    return np.sum(np.asarray(rewards, np.float64) * weights, axis=-1)


def evaluate_trajectories(batch: TrajectoryBatch, value, gamma: float, terminal_at_H: bool = False) -> np.ndarray:
    """Scores ``sum_h gamma^(h-1) r_h + gamma^H V(terminal)``; also stored on ``batch.scores``.

    The terminal state is the one reached after the last action unless
    ``terminal_at_H``, which reads the value one state earlier.
    """
    H = batch.H
    score = discounted_rewards(batch.rewards, gamma)
    if value is not None:
        obs = batch.terminal_observations(terminal_at_H)
        v = value.predict(obs) if hasattr(value, "predict") else value(obs)
        v = np.asarray(v, dtype=np.float64).reshape(score.shape)
        alive_end = batch.alive[..., H - 1] if terminal_at_H else batch.final_alive
        score = score + (gamma**H) * np.where(alive_end, v, 0.0)
    batch.scores = score
    return score


def elite_indices(scores: np.ndarray, E: int) -> np.ndarray:
    """Indices of the ``E`` largest scores along the last axis; ties go to the lower index."""
    order = np.argsort(-np.asarray(scores), axis=-1, kind="stable")
    return order[..., :E]


def select_action(batch: TrajectoryBatch, E: int) -> np.ndarray:
    """Mean first action of the ``E`` best-scored trajectories."""
    if batch.scores is None:
        raise ValueError("scores are unset; run evaluate_trajectories first")
    if not 1 <= E <= batch.N:
        raise ConfigError("lookahead.E", f"must satisfy 1 <= E <= N (N={batch.N}), got {E}")
    idx = elite_indices(batch.scores, E)
    first = batch.actions[..., 0, :]
    chosen = np.take_along_axis(first, idx[..., None], axis=-2)
    return np.mean(chosen, axis=-2, dtype=np.float64).astype(np.float32)


def lookahead_step(policy, value, model, state, cfg: LookaheadConfig, rng, task) -> np.ndarray:
    """Sample, score and select for the live ``state`` (anything with ``physical``, ``goal`` and ``prev_action``)."""
    batch = sample_trajectories(policy, model, state.physical, state.goal, cfg, rng, task, state.prev_action)
    evaluate_trajectories(batch, value, cfg.gamma, cfg.terminal_at_H)
    return select_action(batch, cfg.E)


class LookaheadController:
    """Bundles policy, value, model and task into a per-decision controller."""

    def __init__(self, policy, value, model, cfg: LookaheadConfig, task):
        self.policy = policy
        self.value = value
        self.model = model
        self.cfg = cfg
        self.task = task

    def __call__(self, state, obs, rngs: Sequence[np.random.Generator]) -> np.ndarray:
        return lookahead_step(self.policy, self.value, self.model, state, self.cfg, rngs, self.task)

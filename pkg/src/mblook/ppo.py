"""Actor-critic PPO producing the Gaussian policy and value function used by the lookahead.

Observations are normalised with running statistics that are frozen for the
duration of each rollout and stored with the networks, so a checkpoint
reproduces exactly the inputs the networks were trained on.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import nncore
from .envs import EnvConfig, VecEnv, layout_for
from .errors import ComponentError, ConfigError, OptimizerError
from .nncore import Checkpoint, GaussianHeadSpec, MlpSpec
from .nncore import mlp as _mlp
from .seeding import derive_rng

log = logging.getLogger(__name__)

OBS_CLIP = 10.0


@dataclass(frozen=True)
class PpoConfig:
    num_envs: int = 16
    rollout_length: int = 256
    total_env_steps: int = 2_000_000
    epochs: int = 4
    minibatch_size: int = 1024
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    value_loss_weight: float = 0.5
    entropy_weight: float = 1e-3
    learning_rate: float = 3e-4
    max_grad_norm: float = 0.5
    obs_normalization: bool = True
    reward_scale: float = 0.01
    policy_hidden: tuple = (64, 64)
    value_hidden: tuple = (64, 64)
    checkpoint_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, "policy_hidden", tuple(int(w) for w in self.policy_hidden))
        object.__setattr__(self, "value_hidden", tuple(int(w) for w in self.value_hidden))
        self.validate()

    def validate(self, prefix: str = "ppo") -> None:
        def bad(key, msg):
            raise ConfigError(f"{prefix}.{key}", msg)

        for key in ("num_envs", "rollout_length", "total_env_steps", "epochs", "minibatch_size", "checkpoint_every"):
            v = getattr(self, key)
            if not isinstance(v, int) or v < 1:
                bad(key, f"must be a positive integer, got {v!r}")
        if not 0 < self.gamma <= 1:
            bad("gamma", "must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            bad("gae_lambda", "must lie in [0, 1]")
        if not self.clip_epsilon > 0:
            bad("clip_epsilon", "must be > 0")
        if (self.num_envs * self.rollout_length) % self.minibatch_size:
            bad("minibatch_size", "must divide num_envs * rollout_length")
        for key in ("learning_rate", "max_grad_norm", "reward_scale"):
            if not getattr(self, key) > 0:
                bad(key, "must be > 0")
        for key in ("value_loss_weight", "entropy_weight"):
            if getattr(self, key) < 0:
                bad(key, "must be >= 0")
        if not self.policy_hidden or not self.value_hidden or min(self.policy_hidden + self.value_hidden) < 1:
            bad("policy_hidden", "hidden widths must be positive")

    @property
    def buffer_size(self) -> int:
        return self.num_envs * self.rollout_length

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy_hidden"] = list(self.policy_hidden)
        d["value_hidden"] = list(self.value_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict, prefix: str = "ppo") -> "PpoConfig":
        names = {f.name for f in fields(cls)}
        for k in d:
            if k not in names:
                raise ConfigError(f"{prefix}.{k}", "unknown key")
        return cls(**d)


class RunningMeanStd:
    """Streaming per-feature mean and variance (parallel-merge form)."""

    def __init__(self, dim: int):
        self.mean = np.zeros(dim, dtype=np.float64)
        self.var = np.ones(dim, dtype=np.float64)
        self.count = 1e-4

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.mean.shape[0])
        b_mean, b_var, b_count = batch.mean(axis=0), batch.var(axis=0), batch.shape[0]
        delta = b_mean - self.mean
        total = self.count + b_count
        self.mean = self.mean + delta * b_count / total
        m2 = self.var * self.count + b_var * b_count + delta**2 * self.count * b_count / total
        self.var = m2 / total
        self.count = total

    def frozen(self) -> tuple[np.ndarray, np.ndarray]:
        std = np.sqrt(self.var + 1e-8)
        return self.mean.astype(np.float32), np.maximum(std, 1e-4).astype(np.float32)


class ObsNormalizer:
    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float32)
        self.std = np.asarray(std, dtype=np.float32)

    @classmethod
    def identity(cls, dim: int) -> "ObsNormalizer":
        return cls(np.zeros(dim, np.float32), np.ones(dim, np.float32))

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        z = (np.asarray(obs, dtype=np.float32) - self.mean) / self.std
        return np.clip(z, -OBS_CLIP, OBS_CLIP)

    def stats(self) -> dict[str, list[float]]:
        return {"obs_mean": self.mean.tolist(), "obs_std": self.std.tolist()}


class GaussianPolicy:
    """Diagonal-Gaussian policy over raw (un-normalised) observations."""

    def __init__(self, spec: GaussianHeadSpec, params: dict[str, np.ndarray], normalizer: ObsNormalizer, meta=None):
        self.spec = spec
        self.params = params
        self.normalizer = normalizer
        self.meta = dict(meta or {})
        self.refresh()

    def refresh(self) -> None:
        """Rebuild the inference copies after ``params`` changed."""
        self._trunk = _mlp.FoldedMlp.from_params(self.spec.trunk, _mlp.prefixed(self.params, "trunk."))
        self._mean = _mlp.FoldedMlp.from_params(self.spec.mean_head, _mlp.prefixed(self.params, "mean."))
        self._logstd = _mlp.FoldedMlp.from_params(self.spec.logstd_head, _mlp.prefixed(self.params, "logstd."))

    @classmethod
    def init(cls, obs_dim: int, action_dim: int, hidden, rng) -> "GaussianPolicy":
        spec = GaussianHeadSpec.build(obs_dim, action_dim, hidden)
        return cls(spec, nncore.init_head_params(spec, rng), ObsNormalizer.identity(obs_dim))

    @property
    def obs_dim(self) -> int:
        return self.spec.obs_dim

    @property
    def action_dim(self) -> int:
        return self.spec.action_dim

    def distribution_normalized(self, nobs: np.ndarray):
        h = self._trunk(nobs)
        log_std = np.clip(self._logstd(h), self.spec.log_std_min, self.spec.log_std_max)
        return self._mean(h), log_std

    def distribution(self, obs: np.ndarray):
        """``(mean, log_std)`` for a batch of raw observations."""
        return self.distribution_normalized(self.normalizer(obs))

    def act(self, obs, rng=None, deterministic=False, noise=None):
        mean, log_std = self.distribution(np.atleast_2d(obs))
        if deterministic:
            return mean, nncore.gaussian_log_prob(mean, log_std, mean)
        return nncore.gaussian_sample(mean, log_std, rng, noise, self.spec.log_std_min, self.spec.log_std_max)

    def sample_actions(self, obs, rngs):
        """Actions for ``obs (M, N, obs_dim)``; block ``m`` draws its noise from ``rngs[m]``.

        With ``M = N = 1`` this consumes the generator exactly as :meth:`act` does.
        """
        M, N = obs.shape[0], obs.shape[1]
        mean, log_std = self.distribution(obs.reshape(M * N, -1))
        noise = np.concatenate([r.standard_normal((N, self.action_dim)) for r in rngs], axis=0)
        action, _ = nncore.gaussian_sample(mean, log_std, None, noise, self.spec.log_std_min, self.spec.log_std_max)
        return action.astype(np.float32).reshape(M, N, -1)

    def to_checkpoint(self, meta=None) -> Checkpoint:
        m = dict(self.meta)
        m.update(meta or {})
        return Checkpoint("policy", self.spec.to_dict(), self.params, self.normalizer.stats(), m)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "GaussianPolicy":
        if ckpt.kind != "policy":
            raise ValueError(f"expected a policy checkpoint, got {ckpt.kind!r}")
        spec = GaussianHeadSpec.from_dict(ckpt.spec)
        norm = ObsNormalizer(ckpt.norm_stats["obs_mean"], ckpt.norm_stats["obs_std"])
        return cls(spec, {k: v.copy() for k, v in ckpt.params.items()}, norm, ckpt.meta)


class ValueFunction:
    """State-value network; :meth:`predict` answers in environment reward units."""

    def __init__(self, spec: MlpSpec, params, normalizer: ObsNormalizer, reward_scale: float = 1.0, meta=None):
        self.spec = spec
        self.params = params
        self.normalizer = normalizer
        self.reward_scale = float(reward_scale)
        self.meta = dict(meta or {})
        self.refresh()

    def refresh(self) -> None:
        self._net = _mlp.FoldedMlp.from_params(self.spec, self.params)

    @classmethod
    def init(cls, obs_dim: int, hidden, rng, reward_scale: float = 1.0) -> "ValueFunction":
        spec = MlpSpec.build([obs_dim, *hidden, 1], activation="tanh")
        return cls(spec, nncore.init_params(spec, rng), ObsNormalizer.identity(obs_dim), reward_scale)

    def predict_scaled_normalized(self, nobs):
        return self._net(nobs)[:, 0]

    def predict(self, obs):
        return self.predict_scaled_normalized(self.normalizer(np.atleast_2d(obs))) / np.float32(self.reward_scale)

    def to_checkpoint(self, meta=None) -> Checkpoint:
        m = dict(self.meta)
        m.update(meta or {})
        m["reward_scale"] = self.reward_scale
        return Checkpoint("value", self.spec.to_dict(), self.params, self.normalizer.stats(), m)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "ValueFunction":
        if ckpt.kind != "value":
            raise ValueError(f"expected a value checkpoint, got {ckpt.kind!r}")
        norm = ObsNormalizer(ckpt.norm_stats["obs_mean"], ckpt.norm_stats["obs_std"])
        params = {k: v.copy() for k, v in ckpt.params.items()}
        return cls(MlpSpec.from_dict(ckpt.spec), params, norm, ckpt.meta.get("reward_scale", 1.0), ckpt.meta)


@dataclass
class RolloutBuffer:
    """Per-env, per-step arrays of one rollout; leading shape ``(num_envs, T)``.

    ``observations`` are already normalised; ``rewards`` and ``values`` are in
    the scaled units the value network is trained on.
    """

    observations: np.ndarray
    actions: np.ndarray
    log_probabilities: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    bootstrap_value: np.ndarray
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None
    raw_observations: Optional[np.ndarray] = None
    episode_returns: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)


def gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float):
    """Generalised advantage estimates along the last axis.

    ``dones[t]`` marks that the transition at ``t`` ended an episode, cutting
    both the bootstrap and the advantage recursion.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    T = rewards.shape[-1]
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    last = np.zeros(rewards.shape[:-1])
    for t in reversed(range(T)):
        delta = rewards[..., t] + gamma * next_value * notdone[..., t] - values[..., t]
        last = delta + gamma * lam * notdone[..., t] * last
        adv[..., t] = last
        next_value = values[..., t]
    return adv, adv + values


class _EpisodeTracker:
    def __init__(self, n):
        self.ret = np.zeros(n)
        self.length = np.zeros(n, dtype=np.int64)


def collect_rollouts(
    policy: GaussianPolicy,
    value: ValueFunction,
    env: VecEnv,
    T: int,
    rng: np.random.Generator,
    gamma: float = 0.99,
    reward_scale: float = 1.0,
    tracker: Optional[_EpisodeTracker] = None,
) -> RolloutBuffer:
    """Step every env ``T`` times with the stochastic policy, auto-resetting finished episodes.

    Timeouts are not true terminations: the reward of a truncated step is
    augmented with the discounted value of its final observation.
    """
    n, A = env.num_envs, policy.action_dim
    obs_dim = policy.obs_dim
    buf = RolloutBuffer(
        observations=np.zeros((n, T, obs_dim), np.float32),
        actions=np.zeros((n, T, A), np.float32),
        log_probabilities=np.zeros((n, T), np.float32),
        rewards=np.zeros((n, T), np.float32),
        values=np.zeros((n, T), np.float32),
        dones=np.zeros((n, T), bool),
        bootstrap_value=np.zeros(n, np.float32),
        raw_observations=np.zeros((n, T, obs_dim), np.float32),
    )
    tracker = tracker or _EpisodeTracker(n)
    raw = env.observe()
    for t in range(T):
        nobs = policy.normalizer(raw)
        mean, log_std = policy.distribution_normalized(nobs)
        action, logp = nncore.gaussian_sample(mean, log_std, rng, None, policy.spec.log_std_min, policy.spec.log_std_max)
        action = action.astype(np.float32)
        v = value.predict_scaled_normalized(nobs)
        try:
            res = env.step(action, auto_reset=True)
        except Exception as exc:
            raise ComponentError(f"environment step failed at rollout step {t}: {exc}") from exc
        r = res.reward.astype(np.float64)
        tracker.ret += r
        tracker.length += 1
        done = res.terminated | res.truncated
        r_scaled = r * reward_scale
        if np.any(res.truncated):
            idx = np.flatnonzero(res.truncated)
            final = policy.normalizer(res.info["final_observation"][idx])
            r_scaled[idx] += gamma * value.predict_scaled_normalized(final)
        for i in np.flatnonzero(done):
            buf.episode_returns.append(float(tracker.ret[i]))
            buf.episode_lengths.append(int(tracker.length[i]))
            tracker.ret[i] = 0.0
            tracker.length[i] = 0
        buf.raw_observations[:, t] = raw
        buf.observations[:, t] = nobs
        buf.actions[:, t] = action
        buf.log_probabilities[:, t] = logp
        buf.rewards[:, t] = r_scaled
        buf.values[:, t] = v
        buf.dones[:, t] = done
        raw = res.observation
    buf.bootstrap_value[:] = value.predict_scaled_normalized(policy.normalizer(raw))
    return buf


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    first_ratio_max_dev: float
    grad_norm: float


def clipped_surrogate(ratio, adv, eps):
    """Per-sample PPO objective ``min(r A, clip(r, 1-eps, 1+eps) A)`` and the mask of samples passing gradient."""
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    obj = np.minimum(ratio * adv, clipped * adv)
    passes = ~(((adv > 0) & (ratio > 1.0 + eps)) | ((adv < 0) & (ratio < 1.0 - eps)))
    return obj, passes


def surrogate_loss(mean, log_std, action, old_logp, adv, eps: float, entropy_weight: float = 0.0):
    """Clipped policy loss ``-mean(min(r A, clip(r) A)) - entropy_weight * mean(H)``.

    Returns the loss of the surrogate term alone and its gradients with
    respect to ``mean`` and ``log_std``, including the entropy bonus.
    """
    n = mean.shape[0]
    logp = nncore.gaussian_log_prob(mean, log_std, action).astype(np.float64)
    ratio = np.exp(logp - old_logp)
    obj, passes = clipped_surrogate(ratio, adv, eps)
    g_logp = -(adv * ratio * passes) / n
    std_inv = np.exp(-log_std)
    z = (action - mean) * std_inv
    d_mean = g_logp[:, None] * z * std_inv
    d_logstd = g_logp[:, None] * (z * z - 1.0) - entropy_weight / n
    return float(-obj.mean()), d_mean, d_logstd


def ppo_update(policy, value, buf: RolloutBuffer, cfg: PpoConfig, policy_opt, value_opt, rng) -> UpdateStats:
    """Clipped-surrogate epochs over the buffer; parameters of both networks change in place."""
    if buf.advantages is None:
        raise ValueError("advantages must be computed before the update")
    N = buf.rewards.size
    obs = buf.observations.reshape(N, -1)
    acts = buf.actions.reshape(N, -1)
    old_logp = buf.log_probabilities.reshape(N).astype(np.float64)
    adv_all = normalize_advantages(buf.advantages.reshape(N))
    ret_all = buf.returns.reshape(N)
    spec = policy.spec
    eps = cfg.clip_epsilon
    pl, vl, ent, kl, cf, gn = [], [], [], [], [], []
    first_dev = None
    batch_index = 0
    for _epoch in range(cfg.epochs):
        perm = rng.permutation(N)
        for start in range(0, N, cfg.minibatch_size):
            idx = perm[start : start + cfg.minibatch_size]
            n = idx.size
            mean, log_std, hcache = nncore.head_forward(spec, policy.params, obs[idx], "train")
            a = acts[idx]
            logp = nncore.gaussian_log_prob(mean, log_std, a).astype(np.float64)
            ratio = np.exp(logp - old_logp[idx])
            if first_dev is None:
                first_dev = float(np.max(np.abs(ratio - 1.0)))
            A = adv_all[idx]
            entropy = nncore.gaussian_entropy(log_std)
            p_loss, d_mean, d_logstd = surrogate_loss(mean, log_std, a, old_logp[idx], A, eps, cfg.entropy_weight)
            p_grads, _ = nncore.head_backward(
                spec, policy.params, hcache, d_mean.astype(np.float32), d_logstd.astype(np.float32)
            )

            v, vcache = nncore.forward(value.spec, value.params, obs[idx], "train")
            err = v[:, 0].astype(np.float64) - ret_all[idx]
            v_loss = float(np.mean(err * err))
            dv = (2.0 * cfg.value_loss_weight * err / n)[:, None].astype(np.float32)
            v_grads, _ = nncore.backward(value.spec, value.params, vcache, dv)

            total = p_loss + cfg.value_loss_weight * v_loss - cfg.entropy_weight * float(entropy.mean())
            if not math.isfinite(total):
                raise OptimizerError(f"non-finite PPO loss at minibatch {batch_index}")
            gn.append(nncore.clip_by_global_norm([p_grads, v_grads], cfg.max_grad_norm))
            nncore.adam_step(policy.params, p_grads, policy_opt)
            nncore.adam_step(value.params, v_grads, value_opt)
            pl.append(p_loss)
            vl.append(v_loss)
            ent.append(float(entropy.mean()))
            kl.append(float(np.mean(old_logp[idx] - logp)))
            cf.append(float(np.mean(np.abs(ratio - 1.0) > eps)))
            batch_index += 1
    policy.refresh()
    value.refresh()
    return UpdateStats(
        float(np.mean(pl)), float(np.mean(vl)), float(np.mean(ent)), float(np.mean(kl)), float(np.mean(cf)),
        float(first_dev), float(np.mean(gn)),
    )


def _run_id(ppo_cfg: PpoConfig, env_cfg: EnvConfig, seed: int) -> str:
    import hashlib

    blob = json.dumps({"ppo": ppo_cfg.to_dict(), "env": env_cfg.to_dict(), "seed": seed}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value: ValueFunction
    curve: list
    policy_path: Optional[Path] = None
    value_path: Optional[Path] = None


def train(ppo_cfg: PpoConfig, env_cfg: EnvConfig, seed: int, out_dir=None) -> TrainResult:
    """Alternate rollout collection and clipped updates until ``total_env_steps``.

    Writes ``policy_final.mblc``, ``value_final.mblc``, periodic
    ``policy_uNNNN.mblc``/``value_uNNNN.mblc`` and ``curve.jsonl`` under
    ``out_dir`` when given.
    """
    lay = layout_for(env_cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    init_rng = derive_rng(seed, "ppo", "init")
    policy = GaussianPolicy.init(lay.obs_dim, lay.action_dim, ppo_cfg.policy_hidden, init_rng)
    value = ValueFunction.init(lay.obs_dim, ppo_cfg.value_hidden, init_rng, ppo_cfg.reward_scale)
    env = VecEnv(env_cfg, [derive_rng(seed, "ppo", "env", i) for i in range(ppo_cfg.num_envs)])
    act_rng = derive_rng(seed, "ppo", "actions")
    mb_rng = derive_rng(seed, "ppo", "minibatches")
    lr = ppo_cfg.learning_rate
    p_opt = nncore.adam_init(policy.params, policy.spec.trainable_names(), alpha=lr)
    v_opt = nncore.adam_init(value.params, value.spec.trainable_names(), alpha=lr)
    rms = RunningMeanStd(lay.obs_dim)
    tracker = _EpisodeTracker(ppo_cfg.num_envs)
    run_id = _run_id(ppo_cfg, env_cfg, seed)
    n_updates = max(1, ppo_cfg.total_env_steps // ppo_cfg.buffer_size)
    curve = []
    env_steps = 0
    curve_file = open(out / "curve.jsonl", "w") if out is not None else None

    def save_pair(tag, step):
        meta = {"seed": int(seed), "run_id": run_id, "creation_step": int(step), "tag": tag,
                "env": env_cfg.to_dict(), "ppo": ppo_cfg.to_dict()}
        pp, vp = out / f"policy_{tag}.mblc", out / f"value_{tag}.mblc"
        nncore.save(pp, policy.to_checkpoint(meta))
        nncore.save(vp, value.to_checkpoint(meta))
        return pp, vp

    try:
        for u in range(n_updates):
            if ppo_cfg.obs_normalization:
                mean, std = rms.frozen()
                policy.normalizer = ObsNormalizer(mean, std)
                value.normalizer = policy.normalizer
            buf = collect_rollouts(
                policy, value, env, ppo_cfg.rollout_length, act_rng, ppo_cfg.gamma, ppo_cfg.reward_scale, tracker
            )
            env_steps += buf.rewards.size
            buf.advantages, buf.returns = gae(
                buf.rewards, buf.values, buf.dones, buf.bootstrap_value, ppo_cfg.gamma, ppo_cfg.gae_lambda
            )
            stats = ppo_update(policy, value, buf, ppo_cfg, p_opt, v_opt, mb_rng)
            if ppo_cfg.obs_normalization:
                rms.update(buf.raw_observations.reshape(-1, lay.obs_dim))
            rec = {
                "update": u,
                "env_steps": env_steps,
                "mean_episode_reward": float(np.mean(buf.episode_returns)) if buf.episode_returns else None,
                "mean_episode_length": float(np.mean(buf.episode_lengths)) if buf.episode_lengths else None,
                "episodes": len(buf.episode_returns),
                "policy_loss": stats.policy_loss,
                "value_loss": stats.value_loss,
                "entropy": stats.entropy,
                "approx_kl": stats.approx_kl,
                "clip_fraction": stats.clip_fraction,
            }
            curve.append(rec)
            if curve_file is not None:
                curve_file.write(json.dumps(rec, sort_keys=True) + "\n")
                curve_file.flush()
            if rec["mean_episode_reward"] is not None:
                log.info("update %d/%d steps %d reward %.2f", u + 1, n_updates, env_steps, rec["mean_episode_reward"])
            if out is not None and (u + 1) % ppo_cfg.checkpoint_every == 0 and u + 1 < n_updates:
                save_pair(f"u{u + 1:04d}", env_steps)
    finally:
        if curve_file is not None:
            curve_file.close()
    # the frozen statistics of the last rollout are the ones the final networks were updated on
    result = TrainResult(policy, value, curve)
    if out is not None:
        result.policy_path, result.value_path = save_pair("final", env_steps)
    return result


def evaluate_policy(policy: GaussianPolicy, env_cfg: EnvConfig, episodes: int, seed: int, deterministic: bool = True):
    """Full-episode metrics of the policy alone (see :func:`mblook.harness.run_episodes`)."""
    from .harness import PolicyController, run_episodes

    return run_episodes(PolicyController(policy, deterministic), env_cfg, episodes, seed).summary

"""Diagonal Gaussian policy heads: a shared trunk feeding separate mean and log-std networks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import DimensionError
from . import mlp
from .mlp import MlpSpec

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianHeadSpec:
    trunk: MlpSpec
    mean_head: MlpSpec
    logstd_head: MlpSpec
    log_std_min: float = LOG_STD_MIN
    log_std_max: float = LOG_STD_MAX

    def __post_init__(self):
        if self.mean_head.input_dim != self.trunk.output_dim or self.logstd_head.input_dim != self.trunk.output_dim:
            raise DimensionError("head input widths must equal the trunk output width")
        if self.mean_head.output_dim != self.logstd_head.output_dim:
            raise DimensionError("mean and log-std heads must have the action dimension as output")
        if not self.log_std_min < self.log_std_max:
            raise ValueError("log_std_min must be below log_std_max")

    @classmethod
    def build(cls, obs_dim: int, action_dim: int, hidden=(64, 64), activation: str = "tanh") -> "GaussianHeadSpec":
        trunk = MlpSpec.build([obs_dim, *hidden], activation=activation, out_activation=activation)
        return cls(
            trunk,
            MlpSpec.build([hidden[-1], action_dim]),
            MlpSpec.build([hidden[-1], action_dim]),
        )

    @property
    def obs_dim(self) -> int:
        return self.trunk.input_dim

    @property
    def action_dim(self) -> int:
        return self.mean_head.output_dim

    def parts(self):
        return (("trunk.", self.trunk), ("mean.", self.mean_head), ("logstd.", self.logstd_head))

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for prefix, spec in self.parts():
            out.update({prefix + k: v for k, v in spec.param_shapes().items()})
        return out

    def trainable_names(self) -> list[str]:
        return [prefix + k for prefix, spec in self.parts() for k in spec.trainable_names()]

    def to_dict(self) -> dict:
        return {
            "trunk": self.trunk.to_dict(),
            "mean_head": self.mean_head.to_dict(),
            "logstd_head": self.logstd_head.to_dict(),
            "log_std_min": self.log_std_min,
            "log_std_max": self.log_std_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianHeadSpec":
        return cls(
            MlpSpec.from_dict(d["trunk"]),
            MlpSpec.from_dict(d["mean_head"]),
            MlpSpec.from_dict(d["logstd_head"]),
            float(d["log_std_min"]),
            float(d["log_std_max"]),
        )


def init_head_params(spec: GaussianHeadSpec, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    params = {}
    for prefix, sub in spec.parts():
        params.update(mlp.add_prefix(mlp.init_params(sub, rng, dtype), prefix))
    return params


@dataclass
class HeadCache:
    trunk: mlp.ForwardCache
    mean: mlp.ForwardCache
    logstd: mlp.ForwardCache
    raw_log_std: np.ndarray


def head_forward(spec: GaussianHeadSpec, params, obs, mode="eval", rng=None):
    """Returns ``(mean, clamped log_std, cache)``."""
    h, c_trunk = mlp.forward(spec.trunk, mlp.prefixed(params, "trunk."), obs, mode, rng)
    mean, c_mean = mlp.forward(spec.mean_head, mlp.prefixed(params, "mean."), h, mode, rng)
    raw, c_ls = mlp.forward(spec.logstd_head, mlp.prefixed(params, "logstd."), h, mode, rng)
    log_std = np.clip(raw, spec.log_std_min, spec.log_std_max)
    return mean, log_std, HeadCache(c_trunk, c_mean, c_ls, raw)


def head_backward(spec: GaussianHeadSpec, params, cache: HeadCache, d_mean, d_log_std):
    """Backpropagate gradients w.r.t. the mean and the clamped log-std; clamped entries pass no gradient."""
    inside = (cache.raw_log_std >= spec.log_std_min) & (cache.raw_log_std <= spec.log_std_max)
    g_mean, gh_mean = mlp.backward(spec.mean_head, mlp.prefixed(params, "mean."), cache.mean, d_mean)
    g_ls, gh_ls = mlp.backward(spec.logstd_head, mlp.prefixed(params, "logstd."), cache.logstd, d_log_std * inside)
    g_trunk, g_in = mlp.backward(spec.trunk, mlp.prefixed(params, "trunk."), cache.trunk, gh_mean + gh_ls)
    grads = {}
    grads.update(mlp.add_prefix(g_trunk, "trunk."))
    grads.update(mlp.add_prefix(g_mean, "mean."))
    grads.update(mlp.add_prefix(g_ls, "logstd."))
    return grads, g_in


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Log density of a diagonal Gaussian, summed over the last axis."""
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - HALF_LOG_2PI, axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> np.ndarray:
    return np.sum(log_std + 0.5 + HALF_LOG_2PI, axis=-1)


def gaussian_sample(
    mean: np.ndarray,
    log_std: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
    log_std_min: float = LOG_STD_MIN,
    log_std_max: float = LOG_STD_MAX,
) -> tuple[np.ndarray, np.ndarray]:
    """Reparameterised sample ``mean + exp(log_std) * z`` and its log-probability.

    ``z`` is drawn from ``rng`` with the shape of ``mean`` unless ``noise`` is
    supplied (the lookahead pre-draws its noise block).
    """
    mean = np.asarray(mean)
    log_std = np.clip(np.asarray(log_std), log_std_min, log_std_max)
    if noise is None:
        noise = rng.standard_normal(mean.shape)
    if np.shape(noise) != mean.shape or log_std.shape != mean.shape:
        raise DimensionError("mean, log_std and noise must share one shape")
    action = mean + np.exp(log_std) * noise
    return action, gaussian_log_prob(mean, log_std, action)

"""Minimal dense-network engine: MLP forward/backward, Gaussian heads, Adam, checkpoints."""

from .adam import AdamState, adam_init, adam_step
from .checkpoint import Checkpoint, load, save
from .gaussian import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    GaussianHeadSpec,
    gaussian_entropy,
    gaussian_log_prob,
    gaussian_sample,
    head_backward,
    head_forward,
    init_head_params,
)
from .mlp import (
    FoldedMlp,
    ForwardCache,
    MlpSpec,
    backward,
    clip_by_global_norm,
    forward,
    global_norm,
    init_params,
    update_batchnorm_stats,
)

__all__ = [
    "AdamState",
    "Checkpoint",
    "FoldedMlp",
    "ForwardCache",
    "GaussianHeadSpec",
    "LOG_STD_MAX",
    "LOG_STD_MIN",
    "MlpSpec",
    "adam_init",
    "adam_step",
    "backward",
    "clip_by_global_norm",
    "forward",
    "gaussian_entropy",
    "gaussian_log_prob",
    "gaussian_sample",
    "global_norm",
    "head_backward",
    "head_forward",
    "init_head_params",
    "init_params",
    "load",
    "save",
    "update_batchnorm_stats",
]

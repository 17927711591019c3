"""Deterministic desk-scale environments: goal pendulum and planar hand."""

from .common import pd_torque, reward, rot_dist, shaped_reward, tendon_torque, wrap_angle
from .config import EnvConfig
from .core import (
    EnvState,
    Layout,
    StepResult,
    VecEnv,
    layout_for,
    new_state,
    observe,
    oracle_step,
    reset,
    reset_batch,
    sample_goal,
    step,
    step_batch,
)

__all__ = [
    "EnvConfig",
    "EnvState",
    "Layout",
    "StepResult",
    "VecEnv",
    "layout_for",
    "new_state",
    "observe",
    "oracle_step",
    "pd_torque",
    "reset",
    "reset_batch",
    "reward",
    "rot_dist",
    "sample_goal",
    "shaped_reward",
    "step",
    "step_batch",
    "tendon_torque",
    "wrap_angle",
]

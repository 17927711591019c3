"""Goal pendulum: a single torque-driven revolute link swung to consecutive goal angles.

``theta = 0`` is the hanging rest position.  Physical state ``(theta, theta_dot)``;
observation ``(cos theta, sin theta, theta_dot, cos goal, sin goal, prev torque)``.
"""

from __future__ import annotations

import numpy as np

from .common import wrap_angle

GRAVITY = 9.81

STATE_NAMES = ("theta", "theta_dot")
STATE_GROUPS = ("object_orientation", "object_velocity")
ANGLE_INDICES = (0,)
ORIENTATION_INDEX = 0
JOINT_POS_INDICES = (0,)
JOINT_VEL_INDICES = (1,)
OBS_DIM = 6


def action_bounds(cfg):
    lim = np.float32(cfg.pendulum_torque_limit)
    return np.array([-lim], dtype=np.float32), np.array([lim], dtype=np.float32)


def joint_action_map(cfg):
    return np.ones((1, 1))


def rest_state(cfg, theta):
    theta = np.asarray(theta, dtype=np.float32)
    return np.stack([theta, np.zeros_like(theta)], axis=-1)


def physics(cfg, x, a):
    """Advance ``cfg.substeps`` semi-implicit Euler substeps; ``a`` is the clipped torque."""
    dtype = x.dtype
    h = dtype.type(cfg.dt / cfg.substeps)
    m, l = cfg.pendulum_mass, cfg.pendulum_length
    inertia = dtype.type(m * l * l)
    mgl = dtype.type(m * GRAVITY * l)
    damping = dtype.type(cfg.pendulum_damping)
    theta = x[:, 0].copy()
    omega = x[:, 1].copy()
    tau = a[:, 0]
    for _ in range(cfg.substeps):
        acc = (tau - mgl * np.sin(theta) - damping * omega) / inertia
        omega = omega + h * acc
        theta = wrap_angle(theta + h * omega)
    return np.stack([theta, omega], axis=-1)


def fallen(cfg, x):
    return np.zeros(x.shape[0], dtype=bool)


def observe(x, goal, prev_action):
    theta = x[..., 0]
    return np.concatenate(
        [
            np.stack([np.cos(theta), np.sin(theta), x[..., 1], np.cos(goal), np.sin(goal)], axis=-1),
            prev_action,
        ],
        axis=-1,
    ).astype(np.float32)


def orientation_and_goal(obs):
    obs = np.asarray(obs)
    return np.arctan2(obs[..., 1], obs[..., 0]), np.arctan2(obs[..., 4], obs[..., 3])


def energy(cfg, x):
    """Mechanical energy relative to the hanging rest state (always >= 0)."""
    x = np.asarray(x, dtype=np.float64)
    m, l = cfg.pendulum_mass, cfg.pendulum_length
    return 0.5 * m * l * l * x[..., 1] ** 2 + m * GRAVITY * l * (1.0 - np.cos(x[..., 0]))

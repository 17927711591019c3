"""Angle arithmetic, actuation laws and the shaped task reward."""

from __future__ import annotations

import numpy as np

from ..errors import InputError

PI = np.pi
TWO_PI = 2.0 * np.pi


def wrap_angle(x):
    """Map angles into (-pi, pi]."""
    x = np.asarray(x)
    pi = x.dtype.type(PI) if x.dtype.kind == "f" else PI
    two_pi = x.dtype.type(TWO_PI) if x.dtype.kind == "f" else TWO_PI
    return pi - np.mod(pi - x, two_pi)


def rot_dist(a, b):
    """Shortest angular distance between two orientations, in [0, pi]."""
    return np.abs(wrap_angle(np.asarray(a) - np.asarray(b)))


def pd_torque(kp, kd, u, q, qdot, limit=None):
    """``kp (u - q) - kd qdot``, optionally saturated at ``+-limit``."""
    tau = np.asarray(kp) * (np.asarray(u) - np.asarray(q)) - np.asarray(kd) * np.asarray(qdot)
    if limit is not None:
        tau = np.clip(tau, -np.asarray(limit), np.asarray(limit))
    return tau


def tendon_torque(K, S, D, a, q, qdot, limit=None):
    """Tendon-synergy joint torques ``K (S a - q) - D qdot``.

    ``S`` maps actuator commands to joint reference angles (joints x actuators);
    ``K`` and ``D`` are joint stiffness and damping, given either as diagonal
    matrices or as their diagonals.  ``a``, ``q`` and ``qdot`` may carry a
    leading batch axis.
    """
    S = np.asarray(S)
    k = np.asarray(K)
    d = np.asarray(D)
    k = np.diagonal(k) if k.ndim == 2 else k
    d = np.diagonal(d) if d.ndim == 2 else d
    a = np.asarray(a)
    q = np.asarray(q)
    qdot = np.asarray(qdot)
    n_joints, n_act = S.shape if S.ndim == 2 else (None, None)
    if S.ndim != 2 or a.shape[-1] != n_act or q.shape[-1] != n_joints or qdot.shape != q.shape:
        raise InputError(f"tendon dimensions disagree: S {S.shape}, a {a.shape}, q {q.shape}, qdot {qdot.shape}")
    if k.shape != (n_joints,) or d.shape != (n_joints,):
        raise InputError(f"K and D must be diagonal over {n_joints} joints")
    # elementwise sum instead of matmul keeps each row independent of the batch size
    ref = np.sum(a[..., None, :] * S, axis=-1)
    tau = k * (ref - q) - d * qdot
    if limit is not None:
        tau = np.clip(tau, -np.asarray(limit), np.asarray(limit))
    return tau


def shaped_reward(rot_distance, action, prev_action, cfg, goal_reached=False, fell=False):
    """Per-step reward from an already computed orientation error.

    Works elementwise over a batch: ``action`` and ``prev_action`` carry the
    action dimension on their last axis.
    """
    action = np.asarray(action)
    prev_action = np.asarray(prev_action)
    r = (
        -cfg.rot_weight * np.asarray(rot_distance)
        + cfg.goal_bonus * np.asarray(goal_reached, dtype=action.dtype)
        - cfg.fall_penalty * np.asarray(fell, dtype=action.dtype)
        - cfg.action_l2_weight * np.sum(action * action, axis=-1)
        - cfg.action_smooth_weight * np.sum((action - prev_action) ** 2, axis=-1)
    )
    return r


def reward(obs, action, prev_action, cfg, goal_reached=False, fell=False):
    """Shaped reward read off an observation vector (or a batch of them)."""
    from .core import layout_for

    obs = np.asarray(obs)
    if not np.all(np.isfinite(obs)):
        raise InputError("non-finite observation")
    lay = layout_for(cfg)
    theta, goal = lay.orientation_and_goal(obs)
    return shaped_reward(rot_dist(theta, goal), action, prev_action, cfg, goal_reached, fell)

"""Planar hand: a disc in a V-shaped palm cradle, rotated by two two-joint fingers.

Coordinates: x to the right, y up, the palm line at ``y = 0``.  The cradle is
two 45-degree walls meeting below the palm line; the disc rests on them with
its centre at the palm line.  Contacts (fingertip/disc and wall/disc) are
compression-only penalty springs with a little normal damping and
Coulomb-capped viscous tangential friction.  The fingers hang from bases
above the disc and pass through the palm (no finger/palm collision).

Physical state (14): ``q[4], qdot[4], x, y, theta, vx, vy, omega``.  Joint
order is left finger base, left finger distal, right finger base, right
finger distal.
"""

from __future__ import annotations

import numpy as np

from .common import pd_torque, tendon_torque, wrap_angle

GRAVITY = 9.81
RADIUS = 0.04
MASS = 0.1
CONTACT_STIFFNESS = 2000.0
CONTACT_DAMPING = 2.0
FRICTION_MU = 0.8
CRADLE_MU = 0.5
FRICTION_VISCOSITY = 1.0
CRADLE_HALF_WIDTH = 0.2
CRADLE_DEPTH = RADIUS * np.sqrt(2.0)  # vertex below the palm line
FINGER_BASES = ((-0.06, 0.09), (0.06, 0.09))
FINGER_SIGNS = (1.0, -1.0)
LINKS = (0.06, 0.05)
JOINT_INERTIA = 5e-4
JOINT_DAMPING = 0.01

STATE_NAMES = ("q0", "q1", "q2", "q3", "qd0", "qd1", "qd2", "qd3", "x", "y", "theta", "vx", "vy", "omega")
STATE_GROUPS = (
    ("joint_position",) * 4
    + ("joint_velocity",) * 4
    + ("object_position",) * 2
    + ("object_orientation",)
    + ("object_velocity",) * 3
)
ANGLE_INDICES = (10,)
ORIENTATION_INDEX = 10
JOINT_POS_INDICES = (0, 1, 2, 3)
JOINT_VEL_INDICES = (4, 5, 6, 7)

_S2 = np.float32(np.sqrt(0.5))
WALL_NORMALS = np.array([[_S2, _S2], [-_S2, _S2]], dtype=np.float32)  # left wall, right wall (pointing into the cradle)


def action_dim(cfg) -> int:
    return 4 if cfg.actuation == "fully_actuated" else 2


def obs_dim(cfg) -> int:
    return 14 + 2 + action_dim(cfg)


def action_bounds(cfg):
    n = action_dim(cfg)
    if cfg.actuation == "fully_actuated":
        return -np.ones(n, dtype=np.float32), np.ones(n, dtype=np.float32)
    return np.zeros(n, dtype=np.float32), np.ones(n, dtype=np.float32)


def joint_action_map(cfg):
    if cfg.actuation == "fully_actuated":
        return np.eye(4)
    return np.asarray(cfg.tendon_synergy, dtype=float)


def radius(cfg):
    return RADIUS * cfg.size_multiplier


def mass(cfg):
    return MASS * cfg.density_multiplier


def rest_height(cfg):
    """Disc-centre height at which the two wall springs exactly carry the weight."""
    r = radius(cfg)
    pen = mass(cfg) * GRAVITY / (2.0 * CONTACT_STIFFNESS * float(_S2))
    return (r - pen) * np.sqrt(2.0) - CRADLE_DEPTH


def rest_state(cfg, theta):
    theta = np.asarray(theta, dtype=np.float32)
    x = np.zeros(theta.shape + (14,), dtype=np.float32)
    x[..., 9] = rest_height(cfg)
    x[..., 10] = theta
    return x


def fingertips(q):
    """Fingertip positions ``(B, 2, 2)`` and Jacobians ``(B, 2, 2, 2)`` (finger, xy, joint)."""
    dtype = q.dtype
    l1, l2 = dtype.type(LINKS[0]), dtype.type(LINKS[1])
    half_pi = dtype.type(np.pi / 2)
    tips, jacs = [], []
    for f in range(2):
        s = dtype.type(FINGER_SIGNS[f])
        bx, by = dtype.type(FINGER_BASES[f][0]), dtype.type(FINGER_BASES[f][1])
        phi1 = -half_pi + s * q[:, 2 * f]
        phi12 = phi1 + s * q[:, 2 * f + 1]
        c1, s1 = np.cos(phi1), np.sin(phi1)
        c12, s12 = np.cos(phi12), np.sin(phi12)
        tip = np.stack([bx + l1 * c1 + l2 * c12, by + l1 * s1 + l2 * s12], axis=-1)
        j2 = s * np.stack([-l2 * s12, l2 * c12], axis=-1)
        j1 = s * np.stack([-l1 * s1, l1 * c1], axis=-1) + j2
        tips.append(tip)
        jacs.append(np.stack([j1, j2], axis=-1))
    return np.stack(tips, axis=1), np.stack(jacs, axis=1)


def _actuator_torque(cfg, a, q, qd):
    dtype = q.dtype
    lim = np.asarray(cfg.torque_limit, dtype=dtype)
    if cfg.actuation == "fully_actuated":
        lo = np.asarray(cfg.joint_lower, dtype=dtype)
        hi = np.asarray(cfg.joint_upper, dtype=dtype)
        u = lo + (a + dtype.type(1.0)) * dtype.type(0.5) * (hi - lo)
        return pd_torque(np.asarray(cfg.kp, dtype=dtype), np.asarray(cfg.kd, dtype=dtype), u, q, qd, lim)
    return tendon_torque(
        np.asarray(cfg.tendon_stiffness, dtype=dtype),
        np.asarray(cfg.tendon_synergy, dtype=dtype),
        np.asarray(cfg.tendon_damping, dtype=dtype),
        a,
        q,
        qd,
        lim,
    )


def _friction(v_t, f_n, mu, viscosity):
    cap = mu * f_n
    return -np.clip(viscosity * v_t, -cap, cap)


def physics(cfg, x, a):
    """Advance ``cfg.substeps`` semi-implicit Euler substeps from states ``x`` under clipped commands ``a``."""
    dtype = x.dtype
    f = dtype.type
    h = f(cfg.dt / cfg.substeps)
    r = f(radius(cfg))
    m = f(mass(cfg))
    inertia = f(0.5 * mass(cfg) * radius(cfg) ** 2)
    k, cn = f(CONTACT_STIFFNESS), f(CONTACT_DAMPING)
    mu, mu_c, ct = f(FRICTION_MU), f(CRADLE_MU), f(FRICTION_VISCOSITY)
    g = f(GRAVITY)
    jin, jdamp = f(JOINT_INERTIA), f(JOINT_DAMPING)
    lo = np.asarray(cfg.joint_lower, dtype=dtype)
    hi = np.asarray(cfg.joint_upper, dtype=dtype)
    vertex_y = f(-CRADLE_DEPTH)
    half_width = f(CRADLE_HALF_WIDTH)
    zero = f(0.0)

    q = x[:, 0:4].copy()
    qd = x[:, 4:8].copy()
    pos = x[:, 8:10].copy()
    theta = x[:, 10].copy()
    vel = x[:, 11:13].copy()
    omega = x[:, 13].copy()

    for _ in range(cfg.substeps):
        tau = _actuator_torque(cfg, a, q, qd)
        force = np.zeros_like(pos)
        torque = np.zeros_like(omega)

        # fingertip / disc contacts
        tips, jac = fingertips(q)
        for fi in range(2):
            jf = jac[:, fi]
            qa, qb = qd[:, 2 * fi], qd[:, 2 * fi + 1]
            jq = jf[:, :, 0] * qa[:, None] + jf[:, :, 1] * qb[:, None]
            d = tips[:, fi] - pos
            dist = np.sqrt(np.sum(d * d, axis=-1))
            pen = r - dist
            active = (pen > zero) & (dist > f(1e-9))
            safe = np.where(active, dist, f(1.0))
            n = d / safe[:, None]
            t = np.stack([-n[:, 1], n[:, 0]], axis=-1)
            v_rel = jq - (vel + (omega * r)[:, None] * t)
            fn = np.maximum(k * pen - cn * np.sum(v_rel * n, axis=-1), zero) * active
            ft = _friction(np.sum(v_rel * t, axis=-1), fn, mu, ct)
            f_tip = fn[:, None] * n + ft[:, None] * t
            tau = tau.copy()
            tau[:, 2 * fi : 2 * fi + 2] += jf[:, 0, :] * f_tip[:, 0:1] + jf[:, 1, :] * f_tip[:, 1:2]
            force -= f_tip
            torque -= r * ft

        # cradle walls
        rel = pos - np.array([0.0, vertex_y], dtype=dtype)
        for wi in range(2):
            n = WALL_NORMALS[wi].astype(dtype)
            t = np.array([-n[1], n[0]], dtype=dtype)
            # explicit products rather than BLAS so a row's result never depends on the batch size
            dist = rel[:, 0] * n[0] + rel[:, 1] * n[1]
            pen = r - dist
            px = pos[:, 0] - r * n[0]
            on_wall = (px >= -half_width) & (px <= zero) if wi == 0 else (px >= zero) & (px <= half_width)
            active = (pen > zero) & on_wall
            v_p = vel - (omega * r)[:, None] * t
            fn = np.maximum(k * pen - cn * (v_p[:, 0] * n[0] + v_p[:, 1] * n[1]), zero) * active
            ft = _friction(v_p[:, 0] * t[0] + v_p[:, 1] * t[1], fn, mu_c, ct)
            force += fn[:, None] * n + ft[:, None] * t
            torque -= r * ft

        qdd = (tau - jdamp * qd) / jin
        qd = qd + h * qdd
        q = q + h * qd
        below, above = q < lo, q > hi
        q = np.clip(q, lo, hi)
        qd = np.where(below | above, zero, qd)

        acc = force / m
        acc[:, 1] -= g
        vel = vel + h * acc
        pos = pos + h * vel
        omega = omega + h * (torque / inertia)
        theta = wrap_angle(theta + h * omega)

    return np.concatenate([q, qd, pos, theta[:, None], vel, omega[:, None]], axis=-1)


def fallen(cfg, x):
    return x[:, 9] < -cfg.fall_distance


def observe(x, goal, prev_action):
    return np.concatenate(
        [x, np.stack([np.cos(goal), np.sin(goal)], axis=-1), prev_action], axis=-1
    ).astype(np.float32)


def orientation_and_goal(obs):
    obs = np.asarray(obs)
    return obs[..., 10], np.arctan2(obs[..., 15], obs[..., 14])

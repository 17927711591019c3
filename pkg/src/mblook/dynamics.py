"""Transition datasets and learned one-step dynamics models.

A model maps a goal-free physical state and an applied action to the next
physical state by predicting the (angle-wrapped) delta.  Two variants share
one predict contract:

* ``monolithic``: a single MLP over the encoded state and action;
* ``modular``: a small single-joint network applied to every actuated joint
  first, whose outputs join the remaining features at the trunk input.

Dataset file layout: ``b"MBLD"``, u16 version, u32 header length, JSON
header, then ``count`` float32 little-endian rows ``s || a || s_next``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import nncore
from .envs import EnvConfig, Layout, layout_for, new_state, oracle_step, reset_batch, step_batch
from .envs.common import wrap_angle
from .errors import ConfigError, DimensionError, FormatError, InputError, OptimizerError
from .nncore import Checkpoint, MlpSpec
from .nncore import mlp as _mlp
from .nncore.checkpoint import read_header, write_prefixed
from .seeding import derive_rng

log = logging.getLogger(__name__)

DATASET_MAGIC = b"MBLD"
DATASET_VERSION = 1
METRIC_GROUPS = ("joint_position", "joint_velocity", "object_position", "object_orientation", "object_velocity")
STD_FLOOR = 1e-6


# ---------------------------------------------------------------- datasets


@dataclass
class TransitionDataset:
    """Records ``(s, a, s_next)`` in collection order plus their provenance header.

    The test split is the trailing ``test_fraction`` of records.
    """

    header: dict
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        self.states = np.ascontiguousarray(self.states, dtype=np.float32)
        self.actions = np.ascontiguousarray(self.actions, dtype=np.float32)
        self.next_states = np.ascontiguousarray(self.next_states, dtype=np.float32)
        n = self.states.shape[0]
        if self.actions.shape[0] != n or self.next_states.shape != self.states.shape:
            raise DimensionError("states, actions and next_states disagree in shape")
        self.header = dict(self.header)
        self.header["count"] = n
        self.header.setdefault("test_fraction", 0.1)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def layout(self) -> dict:
        return self.header["layout"]

    @property
    def test_fraction(self) -> float:
        return float(self.header["test_fraction"])

    def split_indices(self) -> tuple[np.ndarray, np.ndarray]:
        n = len(self)
        n_test = min(n - 1, int(math.ceil(n * self.test_fraction))) if n > 1 else 0
        cut = n - n_test
        return np.arange(cut), np.arange(cut, n)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        train, test = self.split_indices()
        if name == "train":
            idx = train
        elif name == "test":
            idx = test
        elif name == "all":
            idx = np.arange(len(self))
        else:
            raise ValueError(f"split must be train, test or all, got {name!r}")
        return self.states[idx], self.actions[idx], self.next_states[idx]

    def to_bytes(self) -> bytes:
        rows = np.concatenate([self.states, self.actions, self.next_states], axis=1).astype("<f4")
        return rows.tobytes()

    def save(self, path) -> None:
        header = dict(self.header)
        header["state_dim"] = int(self.states.shape[1])
        header["action_dim"] = int(self.actions.shape[1])
        write_prefixed(path, DATASET_MAGIC, DATASET_VERSION, header, self.to_bytes())

    @classmethod
    def load(cls, path) -> "TransitionDataset":
        blob = Path(path).read_bytes()
        header, offset = read_header(blob, DATASET_MAGIC, DATASET_VERSION)
        try:
            d, a, n = int(header["state_dim"]), int(header["action_dim"]), int(header["count"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"dataset header lacks dimensions: {exc}", offset) from exc
        width = 2 * d + a
        need = n * width * 4
        if len(blob) - offset < need:
            raise FormatError(f"truncated records: need {need} bytes, have {len(blob) - offset}", len(blob))
        if len(blob) - offset > need:
            raise FormatError("trailing bytes after the last record", offset + need)
        rows = np.frombuffer(blob, dtype="<f4", count=n * width, offset=offset).reshape(n, width).astype(np.float32)
        return cls(header, rows[:, :d], rows[:, d : d + a], rows[:, d + a :])


def dataset_header(cfg: EnvConfig, seed: int, **extra) -> dict:
    lay = layout_for(cfg)
    h = {
        "env_kind": cfg.env_kind,
        "actuation": cfg.actuation,
        "layout": lay.to_dict(),
        "env_config": cfg.to_dict(),
        "env_config_hash": cfg.config_hash(),
        "seed": int(seed),
        "test_fraction": 0.1,
    }
    h.update(extra)
    return h


@dataclass(frozen=True)
class ExplorationConfig:
    epsilon_uniform: float = 0.1
    num_envs: int = 16
    test_fraction: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.epsilon_uniform <= 1.0:
            raise ConfigError("dynamics.epsilon_uniform", "must lie in [0, 1]")
        if not isinstance(self.num_envs, int) or self.num_envs < 1:
            raise ConfigError("dynamics.num_envs", "must be a positive integer")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("dynamics.test_fraction", "must lie in (0, 1)")


def _resolve_policy(policy):
    from .ppo import GaussianPolicy

    if policy is None or isinstance(policy, GaussianPolicy):
        return policy
    if isinstance(policy, Checkpoint):
        return GaussianPolicy.from_checkpoint(policy)
    return GaussianPolicy.from_checkpoint(nncore.load(policy))


def collect_transitions(
    policy,
    env_cfg: EnvConfig,
    count: int,
    exploration: ExplorationConfig = ExplorationConfig(),
    seed: int = 0,
    out_path=None,
) -> TransitionDataset:
    """Roll the stochastic policy (or uniform actions if ``policy`` is None) and record ``count`` transitions.

    With probability ``epsilon_uniform`` a step's action is replaced by a
    uniform draw from the action box.  Records hold the clipped action that
    was applied, and ``s_next`` is the post-physics state even when the
    episode then resets.
    """
    if not isinstance(count, int) or count < 1:
        raise InputError(f"count must be a positive integer, got {count!r}")
    pol = _resolve_policy(policy)
    lay = layout_for(env_cfg)
    if pol is not None and (pol.obs_dim != lay.obs_dim or pol.action_dim != lay.action_dim):
        raise DimensionError(
            f"policy expects obs {pol.obs_dim}/action {pol.action_dim}, env has {lay.obs_dim}/{lay.action_dim}"
        )
    n_env = exploration.num_envs
    state = new_state(env_cfg, [derive_rng(seed, "collect", "env", i) for i in range(n_env)])
    act_rng = derive_rng(seed, "collect", "actions")
    eps_rng = derive_rng(seed, "collect", "exploration")
    lo = np.asarray(lay.action_low, np.float32)
    hi = np.asarray(lay.action_high, np.float32)
    S = np.zeros((count, lay.state_dim), np.float32)
    A = np.zeros((count, lay.action_dim), np.float32)
    S2 = np.zeros((count, lay.state_dim), np.float32)
    filled = 0
    while filled < count:
        obs = lay.observe(state.physical, state.goal, state.prev_action)
        if pol is not None:
            a, _ = pol.act(obs, act_rng)
        else:
            a = np.zeros((n_env, lay.action_dim), np.float32)
        explore = eps_rng.random(n_env) < exploration.epsilon_uniform
        uniform = eps_rng.uniform(lo, hi, size=(n_env, lay.action_dim))
        a = np.where(explore[:, None], uniform, a)
        a = lay.clip_action(a)
        s = state.physical.copy()
        res = step_batch(state, a, env_cfg)
        take = min(n_env, count - filled)
        S[filled : filled + take] = s[:take]
        A[filled : filled + take] = a[:take]
        S2[filled : filled + take] = state.physical[:take]
        filled += take
        done = np.flatnonzero(res.terminated | res.truncated)
        if done.size:
            reset_batch(env_cfg, state, done)
    header = dataset_header(
        env_cfg,
        seed,
        test_fraction=exploration.test_fraction,
        epsilon_uniform=exploration.epsilon_uniform,
        policy_run_id=(pol.meta.get("run_id") if pol is not None else None),
    )
    ds = TransitionDataset(header, S, A, S2)
    if out_path is not None:
        ds.save(out_path)
    return ds


# ---------------------------------------------------------------- model


VARIANTS = ("monolithic", "modular")


@dataclass(frozen=True)
class DynModelSpec:
    """Architecture of a one-step model; the layer block is Linear, BatchNorm, ReLU, Dropout."""

    variant: str = "monolithic"
    hidden: tuple = (64, 64)
    dropout: float = 0.2
    joint_hidden: tuple = (16,)
    joint_features: int = 2
    shared_joint_weights: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        object.__setattr__(self, "joint_hidden", tuple(int(w) for w in self.joint_hidden))
        if self.variant not in VARIANTS:
            raise ConfigError("dynamics.variant", f"must be one of {VARIANTS}")
        if not self.hidden or min(self.hidden) < 1 or (self.joint_hidden and min(self.joint_hidden) < 1):
            raise ConfigError("dynamics.hidden", "hidden widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dynamics.dropout", "must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["joint_hidden"] = list(self.joint_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DynModelSpec":
        names = {f.name for f in fields(cls)}
        for k in d:
            if k not in names:
                raise ConfigError(f"dynamics.{k}", "unknown key")
        return cls(**d)


@dataclass(frozen=True)
class FeatureMap:
    """How a physical state and action become network inputs.

    Angle features enter as (cos, sin); everything else raw.  For the modular
    variant the actuated joints' (q, qdot, mapped action) are routed to the
    single-joint network and the rest goes straight to the trunk.
    """

    state_dim: int
    action_dim: int
    angle_indices: tuple
    joint_pos: tuple
    joint_vel: tuple
    joint_action_map: tuple

    @classmethod
    def from_layout(cls, lay: Union[Layout, dict]) -> "FeatureMap":
        d = lay.to_dict() if isinstance(lay, Layout) else lay
        return cls(
            len(d["state_names"]),
            len(d["action_low"]),
            tuple(d["angle_indices"]),
            tuple(d["joint_pos_indices"]),
            tuple(d["joint_vel_indices"]),
            tuple(tuple(r) for r in d["joint_action_map"]),
        )

    @property
    def n_joints(self) -> int:
        return len(self.joint_pos)

    def encode_state(self, s: np.ndarray, exclude=()) -> np.ndarray:
        cols = []
        for i in range(self.state_dim):
            if i in exclude:
                continue
            if i in self.angle_indices:
                cols += [np.cos(s[:, i]), np.sin(s[:, i])]
            else:
                cols.append(s[:, i])
        return np.stack(cols, axis=1) if cols else np.zeros((s.shape[0], 0), s.dtype)

    def monolithic_inputs(self, s, a) -> np.ndarray:
        return np.concatenate([self.encode_state(s), a], axis=1).astype(np.float32)

    def joint_inputs(self, s, a) -> np.ndarray:
        """``(B, n_joints, 3)`` per-joint (q, qdot, mapped action)."""
        m = np.asarray(self.joint_action_map, dtype=np.float32)
        mapped = np.sum(a[:, None, :] * m[None, :, :], axis=-1)
        q = s[:, list(self.joint_pos)]
        qd = s[:, list(self.joint_vel)]
        return np.stack([q, qd, mapped], axis=-1).astype(np.float32)

    def rest_inputs(self, s, a) -> np.ndarray:
        exclude = set(self.joint_pos) | set(self.joint_vel)
        return np.concatenate([self.encode_state(s, exclude), a], axis=1).astype(np.float32)

    def delta(self, s, s_next) -> np.ndarray:
        d = (np.asarray(s_next, np.float64) - np.asarray(s, np.float64))
        for i in self.angle_indices:
            d[:, i] = wrap_angle(d[:, i])
        return d


def _norm(x, mean, std):
    return ((x - mean) / std).astype(np.float32)


def _fit_stats(x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    return x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR)


class DynamicsModel:
    """Eval-mode one-step model ``s_next = s + delta_std * net(normalize(s, a))``.

    Targets are scaled but not centred, so a network whose output layer is zero
    predicts ``s_next == s``.
    """

    def __init__(self, spec: DynModelSpec, fmap: FeatureMap, nets: dict, params: dict, stats: dict, meta=None):
        self.spec = spec
        self.fmap = fmap
        self.nets = nets
        self.params = params
        self.stats = {k: np.asarray(v, dtype=np.float32) for k, v in stats.items()}
        self.meta = dict(meta or {})
        self.refresh()

    # construction ---------------------------------------------------------

    @staticmethod
    def build_nets(spec: DynModelSpec, fmap: FeatureMap) -> dict:
        nets = {}
        out_dim = fmap.state_dim
        if spec.variant == "monolithic":
            in_dim = sum(2 if i in fmap.angle_indices else 1 for i in range(fmap.state_dim)) + fmap.action_dim
        else:
            if fmap.n_joints == 0:
                raise ConfigError("dynamics.variant", "modular model needs at least one actuated joint")
            j_in = 3 + fmap.n_joints
            joint = MlpSpec.build([j_in, *spec.joint_hidden, spec.joint_features], activation="relu")
            if spec.shared_joint_weights:
                nets["joint"] = joint
            else:
                for j in range(fmap.n_joints):
                    nets[f"joint{j}"] = joint
            exclude = set(fmap.joint_pos) | set(fmap.joint_vel)
            rest = sum(2 if i in fmap.angle_indices else 1 for i in range(fmap.state_dim) if i not in exclude)
            in_dim = fmap.n_joints * spec.joint_features + rest + fmap.action_dim
        nets["trunk"] = MlpSpec.build(
            [in_dim, *spec.hidden, out_dim], activation="relu", batchnorm=True, dropout=spec.dropout
        )
        return nets

    @classmethod
    def init(cls, spec: DynModelSpec, layout, rng, stats: dict) -> "DynamicsModel":
        fmap = FeatureMap.from_layout(layout)
        nets = cls.build_nets(spec, fmap)
        params = {}
        for name, ns in nets.items():
            params.update(_mlp.add_prefix(nncore.init_params(ns, rng), name + "."))
        meta = {"layout": layout.to_dict() if isinstance(layout, Layout) else dict(layout)}
        return cls(spec, fmap, nets, params, stats, meta)

    def refresh(self) -> None:
        self._folded = {n: _mlp.FoldedMlp.from_params(s, _mlp.prefixed(self.params, n + ".")) for n, s in self.nets.items()}

    def joint_net_name(self, j: int) -> str:
        return "joint" if self.spec.shared_joint_weights else f"joint{j}"

    def zero_output_layer(self) -> None:
        """Zero the trunk's final linear map, turning the model into the identity on state."""
        last = self.nets["trunk"].num_layers - 1
        self.params[f"trunk.{last}.weight"][:] = 0.0
        self.params[f"trunk.{last}.bias"][:] = 0.0
        self.refresh()

    # inputs -----------------------------------------------------------------

    def _check(self, s, a):
        s = np.asarray(s, dtype=np.float32)
        a = np.asarray(a, dtype=np.float32)
        if s.ndim != 2 or s.shape[1] != self.fmap.state_dim:
            raise DimensionError(f"state batch must be (B, {self.fmap.state_dim}), got {s.shape}")
        if a.ndim != 2 or a.shape != (s.shape[0], self.fmap.action_dim):
            raise DimensionError(f"action batch must be ({s.shape[0]}, {self.fmap.action_dim}), got {a.shape}")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
            raise InputError("non-finite state or action")
        return s, a

    def normalized_inputs(self, s, a):
        """Either the monolithic input matrix or ``(joint inputs (B, J, 3 + J), rest inputs)``."""
        st = self.stats
        if self.spec.variant == "monolithic":
            return _norm(self.fmap.monolithic_inputs(s, a), st["in_mean"], st["in_std"])
        ji = _norm(self.fmap.joint_inputs(s, a), st["joint_mean"], st["joint_std"])
        onehot = np.broadcast_to(np.eye(self.fmap.n_joints, dtype=np.float32), (s.shape[0],) + (self.fmap.n_joints,) * 2)
        ji = np.concatenate([ji, onehot], axis=-1)
        rest = _norm(self.fmap.rest_inputs(s, a), st["rest_mean"], st["rest_std"])
        return ji, rest

    # predict ----------------------------------------------------------------

    def predict_normalized(self, s, a) -> np.ndarray:
        inputs = self.normalized_inputs(s, a)
        if self.spec.variant == "monolithic":
            return self._folded["trunk"](inputs)
        ji, rest = inputs
        outs = [self._folded[self.joint_net_name(j)](ji[:, j]) for j in range(self.fmap.n_joints)]
        return self._folded["trunk"](np.concatenate(outs + [rest], axis=1))

    def __call__(self, s, a) -> np.ndarray:
        """Next physical states for a batch (or a single state/action pair)."""
        single = np.ndim(s) == 1
        s2, a2 = self._check(np.atleast_2d(s), np.atleast_2d(a))
        out = s2 + self.predict_normalized(s2, a2) * self.stats["delta_std"]
        for i in self.fmap.angle_indices:
            out[:, i] = wrap_angle(out[:, i])
        return out[0] if single else out

    step = __call__

    # persistence ------------------------------------------------------------

    def to_checkpoint(self, meta=None) -> Checkpoint:
        m = dict(self.meta)
        m.update(meta or {})
        spec = {"model": self.spec.to_dict(), "nets": {n: s.to_dict() for n, s in self.nets.items()}}
        stats = {k: v.tolist() for k, v in self.stats.items()}
        return Checkpoint("dynamics", spec, self.params, stats, m)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "DynamicsModel":
        if ckpt.kind != "dynamics":
            raise ValueError(f"expected a dynamics checkpoint, got {ckpt.kind!r}")
        spec = DynModelSpec.from_dict(ckpt.spec["model"])
        fmap = FeatureMap.from_layout(ckpt.meta["layout"])
        nets = {n: MlpSpec.from_dict(d) for n, d in ckpt.spec["nets"].items()}
        params = {k: v.copy() for k, v in ckpt.params.items()}
        return cls(spec, fmap, nets, params, ckpt.norm_stats, ckpt.meta)


def predict(model, s, a) -> np.ndarray:
    """``s_next_hat`` from a model, a checkpoint or a checkpoint path."""
    if not isinstance(model, DynamicsModel):
        ckpt = model if isinstance(model, Checkpoint) else nncore.load(model)
        model = DynamicsModel.from_checkpoint(ckpt)
    return model(s, a)


class PersistenceModel:
    """Baseline predicting no change: ``s_next_hat = s``."""

    def __call__(self, s, a):
        return np.array(s, dtype=np.float32, copy=True)

    step = __call__


class OracleModel:
    """Ground-truth simulator physics wrapped in the model interface."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg

    def __call__(self, s, a):
        return oracle_step(s, a, self.cfg)

    step = __call__


# ---------------------------------------------------------------- metrics


@dataclass
class DynMetrics:
    """RMSE over all state features and MAE per feature group (None when the env has no such group)."""

    rmse_train_overall: Optional[float] = None
    rmse_test_overall: Optional[float] = None
    joint_position: Optional[float] = None
    joint_velocity: Optional[float] = None
    object_position: Optional[float] = None
    object_orientation: Optional[float] = None
    object_velocity: Optional[float] = None
    split: str = "test"

    def group_mae(self) -> dict:
        return {g: getattr(self, g) for g in METRIC_GROUPS if getattr(self, g) is not None}

    def to_dict(self) -> dict:
        return asdict(self)


def prediction_errors(model, s, a, s_next, angle_indices) -> np.ndarray:
    pred = np.asarray(model(s, a), dtype=np.float64)
    err = pred - np.asarray(s_next, dtype=np.float64)
    for i in angle_indices:
        err[:, i] = wrap_angle(err[:, i])
    return err


def eval_metrics(model, dataset: TransitionDataset, split: str = "test", batch_size: int = 8192) -> DynMetrics:
    """Errors of ``model`` on one split, in the state's physical units."""
    if split not in ("train", "test"):
        raise ValueError(f"split must be train or test, got {split!r}")
    lay = dataset.layout
    s, a, s2 = dataset.split(split)
    if len(s) == 0:
        raise InputError(f"the {split} split is empty")
    angle = tuple(lay["angle_indices"])
    d = s.shape[1]
    sq = np.zeros(d)
    ab = np.zeros(d)
    for i in range(0, len(s), batch_size):
        e = prediction_errors(model, s[i : i + batch_size], a[i : i + batch_size], s2[i : i + batch_size], angle)
        sq += np.sum(e * e, axis=0)
        ab += np.sum(np.abs(e), axis=0)
    n = len(s)
    rmse = float(np.sqrt(sq.sum() / (n * d)))
    m = DynMetrics(split=split)
    if split == "train":
        m.rmse_train_overall = rmse
    else:
        m.rmse_test_overall = rmse
    groups = lay["state_groups"]
    for g in METRIC_GROUPS:
        cols = [i for i, name in enumerate(groups) if name == g]
        if cols:
            setattr(m, g, float(ab[cols].sum() / (n * len(cols))))
    return m


def full_metrics(model, dataset: TransitionDataset) -> DynMetrics:
    """Test-split group MAEs with both RMSE fields filled."""
    m = eval_metrics(model, dataset, "test")
    m.rmse_train_overall = eval_metrics(model, dataset, "train").rmse_train_overall
    return m


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class DynTrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    patience: int = 5
    joint_loss_weight: float = 0.1
    bn_momentum: float = 0.9

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("dynamics.learning_rate", "must be > 0")
        for key in ("batch_size", "epochs", "patience"):
            v = getattr(self, key)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"dynamics.{key}", "must be a positive integer")
        if self.joint_loss_weight < 0:
            raise ConfigError("dynamics.joint_loss_weight", "must be >= 0")


def fit_normalization(fmap: FeatureMap, spec: DynModelSpec, s, a, s_next) -> dict:
    stats = {}
    if spec.variant == "monolithic":
        stats["in_mean"], stats["in_std"] = _fit_stats(fmap.monolithic_inputs(s, a))
    else:
        ji = fmap.joint_inputs(s, a)
        stats["joint_mean"], stats["joint_std"] = _fit_stats(ji.reshape(-1, 3))
        stats["rest_mean"], stats["rest_std"] = _fit_stats(fmap.rest_inputs(s, a))
    delta = fmap.delta(s, s_next)
    stats["delta_std"] = np.maximum(delta.std(axis=0), STD_FLOOR)
    return stats


@dataclass
class DynTrainResult:
    model: DynamicsModel
    metrics: DynMetrics
    history: list = field(default_factory=list)
    path: Optional[Path] = None


def _train_batch(model: DynamicsModel, s, a, target, cfg: DynTrainConfig, opt, rng) -> float:
    """One Adam step on a minibatch; returns the loss (mean squared normalized delta error)."""
    nets, params = model.nets, model.params
    trunk = nets["trunk"]
    grads = {}
    inputs = model.normalized_inputs(s, a)
    n = s.shape[0]
    if model.spec.variant == "monolithic":
        out, cache = nncore.forward(trunk, _mlp.prefixed(params, "trunk."), inputs, "train", rng)
    else:
        ji, rest = inputs
        joint_outs, joint_caches = [], []
        for j in range(model.fmap.n_joints):
            name = model.joint_net_name(j)
            o, c = nncore.forward(nets[name], _mlp.prefixed(params, name + "."), ji[:, j], "train", rng)
            joint_outs.append(o)
            joint_caches.append(c)
        out, cache = nncore.forward(
            trunk, _mlp.prefixed(params, "trunk."), np.concatenate(joint_outs + [rest], axis=1), "train", rng
        )
    err = out.astype(np.float64) - target
    loss = float(np.mean(err * err))
    g_out = (2.0 * err / err.size).astype(np.float32)
    g_trunk, g_in = nncore.backward(trunk, _mlp.prefixed(params, "trunk."), cache, g_out)
    grads.update(_mlp.add_prefix(g_trunk, "trunk."))
    nncore.update_batchnorm_stats(trunk, params, cache, cfg.bn_momentum, prefix="trunk.")
    if model.spec.variant == "modular":
        k = model.spec.joint_features
        fm = model.fmap
        for j in range(fm.n_joints):
            name = model.joint_net_name(j)
            g_j = g_in[:, j * k : (j + 1) * k].astype(np.float64)
            # auxiliary target: this joint's own normalized (dq, dqdot)
            aux_t = target[:, [fm.joint_pos[j], fm.joint_vel[j]]]
            aux_e = joint_outs[j][:, :2].astype(np.float64) - aux_t
            loss += cfg.joint_loss_weight * float(np.mean(aux_e * aux_e)) / fm.n_joints
            g_j[:, :2] += cfg.joint_loss_weight * 2.0 * aux_e / (aux_e.size * fm.n_joints)
            gj, _ = nncore.backward(nets[name], _mlp.prefixed(params, name + "."), joint_caches[j], g_j.astype(np.float32))
            for key, g in gj.items():
                full = f"{name}.{key}"
                grads[full] = grads[full] + g if full in grads else g
    if not math.isfinite(loss):
        raise OptimizerError("non-finite dynamics loss")
    nncore.adam_step(params, grads, opt)
    return loss


def train_dynamics(
    dataset: TransitionDataset,
    spec: DynModelSpec = DynModelSpec(),
    cfg: DynTrainConfig = DynTrainConfig(),
    seed: int = 0,
    out_path=None,
) -> DynTrainResult:
    """Fit a one-step model on the train split, early-stopping on test RMSE.

    The parameters with the best test RMSE are kept.
    """
    lay = dataset.layout
    fmap = FeatureMap.from_layout(lay)
    if dataset.states.shape[1] != fmap.state_dim or dataset.actions.shape[1] != fmap.action_dim:
        raise DimensionError("dataset records do not match their declared layout")
    s, a, s2 = dataset.split("train")
    if len(s) < 2:
        raise InputError("need at least two training records")
    if spec.variant == "modular" and fmap.n_joints == 0:
        raise ConfigError("dynamics.variant", "modular model needs at least one actuated joint")
    stats = fit_normalization(fmap, spec, s, a, s2)
    rng = derive_rng(seed, "dynamics", "init")
    model = DynamicsModel.init(spec, lay, rng, stats)
    model.meta.update({"seed": int(seed), "env_config_hash": dataset.header.get("env_config_hash"),
                       "train": asdict(cfg)})
    names = [f"{n}.{k}" for n, ns in model.nets.items() for k in ns.trainable_names()]
    opt = nncore.adam_init(model.params, names, alpha=cfg.learning_rate)
    target = fmap.delta(s, s2) / model.stats["delta_std"].astype(np.float64)
    shuffle_rng = derive_rng(seed, "dynamics", "shuffle")
    drop_rng = derive_rng(seed, "dynamics", "dropout")
    has_test = len(dataset.split_indices()[1]) > 0
    best, best_params, since_best = math.inf, None, 0
    history = []
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(len(s))
        losses = []
        for start in range(0, len(s), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            if idx.size < 2:
                continue  # batch-norm needs at least two rows
            try:
                losses.append(_train_batch(model, s[idx], a[idx], target[idx], cfg, opt, drop_rng))
            except OptimizerError as exc:
                raise OptimizerError(f"epoch {epoch}: {exc}") from exc
        model.refresh()
        score = eval_metrics(model, dataset, "test").rmse_test_overall if has_test else float(np.mean(losses))
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "test_rmse": score})
        log.info("dynamics epoch %d loss %.5f test rmse %.5f", epoch, history[-1]["train_loss"], score)
        if score < best:
            best, since_best = score, 0
            best_params = {k: v.copy() for k, v in model.params.items()}
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    model.params = best_params
    model.refresh()
    model.meta["epochs_run"] = len(history)
    metrics = full_metrics(model, dataset) if has_test else eval_metrics(model, dataset, "train")
    result = DynTrainResult(model, metrics, history)
    if out_path is not None:
        nncore.save(out_path, model.to_checkpoint({"metrics": metrics.to_dict()}))
        result.path = Path(out_path)
    return result

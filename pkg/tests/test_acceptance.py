"""End-to-end acceptance checks, one test per criterion.

Every test prints a ``criterion N: PASS|FAIL`` line and the terminal
summary repeats them.  The pipeline artifacts (PPO checkpoints, transition
datasets, dynamics models) are built once per session at desk defaults;
set ``MBLOOK_ARTIFACTS`` to a directory to keep and reuse them between runs.
"""

from __future__ import annotations

import copy
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import report
from mblook import nncore
from mblook.cli import main
from mblook.dynamics import (
    DynamicsModel,
    DynModelSpec,
    DynTrainConfig,
    ExplorationConfig,
    PersistenceModel,
    TransitionDataset,
    collect_transitions,
    eval_metrics,
    train_dynamics,
)
from mblook.envs import EnvConfig, VecEnv, pd_torque, tendon_torque
from mblook.harness import RunSpec, benchmark_throughput, density_sweep, paired_confidence_interval, paired_differences, paired_eval
from mblook.lookahead import EnvTask, LookaheadConfig, LookaheadController, evaluate_trajectories, sample_trajectories, select_action
from mblook.nncore import MlpSpec
from mblook.ppo import GaussianPolicy, PpoConfig, ValueFunction, train

pytestmark = pytest.mark.slow

PENDULUM = EnvConfig()
HAND = EnvConfig(env_kind="planar_hand")
# hand contacts need a wider one-step model than the pendulum's default
HAND_MODEL = DynModelSpec(hidden=(256, 256))

# density sweep settings: N and the episode count are reduced to fit one CPU core
SWEEP_N = 256
SWEEP_EPISODES = 48
SWEEP_MULTIPLIERS = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
BENCH_EPISODES = 10


def _artifact_root(tmp_path_factory) -> Path:
    keep = os.environ.get("MBLOOK_ARTIFACTS")
    if keep:
        root = Path(keep)
        root.mkdir(parents=True, exist_ok=True)
        return root
    return tmp_path_factory.mktemp("acceptance")


def _pipeline(root: Path, env: EnvConfig, model: DynModelSpec = DynModelSpec(), seed: int = 0) -> dict:
    """PPO at desk defaults, 10^5 transitions from the trained policy, default dynamics training."""
    out = root / env.env_kind
    paths = {"policy": out / "policy_final.mblc", "value": out / "value_final.mblc",
             "data": out / "transitions.mbld", "dynamics": out / "dynamics.mblc"}
    if not (paths["policy"].exists() and paths["value"].exists()):
        train(PpoConfig(), env, seed, out)
    if not paths["data"].exists():
        collect_transitions(paths["policy"], env, 100_000, ExplorationConfig(), seed, paths["data"])
    if not paths["dynamics"].exists():
        train_dynamics(TransitionDataset.load(paths["data"]), model, DynTrainConfig(), seed, paths["dynamics"])
    return paths


@pytest.fixture(scope="session")
def root(tmp_path_factory):
    return _artifact_root(tmp_path_factory)


@pytest.fixture(scope="session")
def pendulum(root):
    return _pipeline(root, PENDULUM)


@pytest.fixture(scope="session")
def hand(root):
    return _pipeline(root, HAND, HAND_MODEL)


# ---------------------------------------------------------------- 1


def test_criterion_1_gradient_suite():
    from test_nncore import _finite_difference_check

    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_seen, checked, seed = 0.0, 0, 0
    while checked < 50:
        n = int(rng.integers(1, 4))
        widths = tuple(int(w) for w in rng.integers(1, 17, size=n + 1))
        acts = tuple(str(a) for a in rng.choice(["relu", "tanh", "identity"], size=n))
        bn = tuple(bool(b) for b in rng.integers(0, 2, size=n))
        drop = tuple(float(d) for d in rng.choice([0.0, 0.2, 0.5], size=n))
        spec = MlpSpec(widths, acts, bn, drop)
        seed += 1
        worst, kink = _finite_difference_check(spec, seed)
        if kink <= 1e-3:
            continue  # a relu input sits on the kink; the difference quotient is meaningless there
        worst_seen = max(worst_seen, worst)
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = worst_seen <= 1e-4 and elapsed < 60
    report(1, ok, f"50 configurations, worst relative error {worst_seen:.2e}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_tabular_enumeration():
    from test_lookahead import EnumeratingPolicy, TabularTask, TabularValue, _enumerate, tabular_model

    t0 = time.perf_counter()
    ok = True
    for s0 in range(3):
        for E in range(1, 5):
            cfg = LookaheadConfig(N=4, H=2, E=E, gamma=0.5)
            batch = sample_trajectories(EnumeratingPolicy(), tabular_model, np.array([s0], np.float32), 0.0, cfg,
                                        np.random.default_rng(0), TabularTask(), prev_action=np.zeros(1))
            scores = evaluate_trajectories(batch, TabularValue(), 0.5)
            truth = _enumerate(s0, 2, 0.5)
            seqs = [tuple(int(x) for x in batch.actions[n, :, 0]) for n in range(4)]
            ok &= all(scores[n] == truth[seqs[n]] for n in range(4)) and set(seqs) == set(truth)
            ranked = sorted(range(4), key=lambda n: -truth[seqs[n]])
            expected = np.float32(sum(seqs[n][0] for n in ranked[:E]) / E)
            ok &= bool(select_action(batch, E)[0] == expected)
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1.0
    report(2, ok, f"3 start states x E in 1..4 match exhaustive enumeration, {elapsed * 1e3:.1f} ms")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_degenerate_lookahead(pendulum):
    policy = GaussianPolicy.from_checkpoint(nncore.load(pendulum["policy"]))
    model = DynamicsModel.from_checkpoint(nncore.load(pendulum["dynamics"]))
    value = ValueFunction.from_checkpoint(nncore.load(pendulum["value"]))
    ctrl = LookaheadController(policy, value, model, LookaheadConfig(N=1, H=2, E=1), EnvTask(PENDULUM))
    env = VecEnv(PENDULUM, [np.random.default_rng(0)])
    rng = np.random.default_rng(1)
    mismatches = 0
    for _ in range(1000):
        obs = env.observe()
        replay = copy.deepcopy(rng)
        a = ctrl(env.state, obs, [rng])
        direct, _ = policy.act(obs, replay)
        mismatches += int(not np.array_equal(a, direct.astype(np.float32)))
        env.step(a, auto_reset=True)
    report(3, mismatches == 0, f"{1000 - mismatches}/1000 steps bit-identical to the policy sample")
    assert mismatches == 0


# ---------------------------------------------------------------- 4


def test_criterion_4_actuation_closed_forms():
    checks = [
        abs(pd_torque(3.0, 0.1, 1.0, 0.5, 2.0) - (3.0 * 0.5 - 0.1 * 2.0)) <= 1e-6,
        pd_torque(3.0, 0.1, 0.4, 0.4, 0.0) == 0.0,
        pd_torque(3.0, 0.1, 1.0, 0.5, 2.0, limit=0.5) == 0.5,
    ]
    tau = tendon_torque(np.diag([2.0, 2.0]), [[1.0], [0.7]], np.diag([0.1, 0.1]), [1.0], [0.2, 0.1], [0.0, 1.0])
    checks.append(np.allclose(tau, [1.6, 1.1], rtol=0, atol=1e-6))
    S = np.array(HAND.tendon_synergy)
    a = np.array([0.3, 0.8])
    rest = tendon_torque(np.full(4, 5.0), S, np.full(4, 0.2), a, S @ a, np.zeros(4))
    checks.append(bool(np.all(rest == 0.0)))
    ok = all(checks)
    report(4, ok, f"{sum(checks)}/{len(checks)} closed-form checks, tendon equilibrium torque exactly zero")
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion_5_pendulum_end_to_end(pendulum, root):
    spec = RunSpec(policy=pendulum["policy"], value=pendulum["value"], dynamics=pendulum["dynamics"], env=PENDULUM,
                   episodes=200, seed=0, lookahead=LookaheadConfig(N=1024, H=2, E=2), record_timing=False)
    learned = paired_eval(spec, root / "criterion5" / "learned")
    oracle = paired_eval(replace(spec, lookahead=replace(spec.lookahead, model_source="oracle")),
                         root / "criterion5" / "oracle")
    ppo_r = learned["policy"].summary.average_reward
    mpc_r = learned["lookahead"].summary.average_reward
    diff = paired_differences(oracle["policy"], oracle["lookahead"])
    lo, hi = paired_confidence_interval(diff)
    ok_learned = mpc_r >= ppo_r
    ok_oracle = lo >= 0.0
    ok = ok_learned and ok_oracle
    report(5, ok, f"PPO {ppo_r:.2f}, PPO-MPC learned {mpc_r:.2f}, oracle {oracle['lookahead'].summary.average_reward:.2f};"
                  f" oracle paired gain 95% CI [{lo:.2f}, {hi:.2f}]")
    assert ok_learned, "learned-model lookahead below the policy"
    assert ok_oracle, "oracle-model lookahead gain not >= 0 at 95%"


# ---------------------------------------------------------------- 6


def test_criterion_6_dynamics_quality_gate(pendulum, hand):
    lines, ok = [], True
    for name, paths in (("pendulum", pendulum), ("hand", hand)):
        ds = TransitionDataset.load(paths["data"])
        model = DynamicsModel.from_checkpoint(nncore.load(paths["dynamics"]))
        learned = eval_metrics(model, ds, "test").group_mae()
        base = eval_metrics(PersistenceModel(), ds, "test").group_mae()
        for g in (g for g in learned if g.endswith("velocity")):
            ok &= learned[g] < base[g]
            lines.append(f"{name}.{g} {learned[g]:.4g} < {base[g]:.4g}")
        s, a, _ = ds.split("test")
        ref = model(s[:256], a[:256])
        ok &= all(np.array_equal(model(s[:256], a[:256]), ref) for _ in range(1000))
    report(6, ok, "; ".join(lines) + "; 10^3 repeated predicts bit-identical")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_density_sweep(hand, root):
    spec = RunSpec(policy=hand["policy"], value=hand["value"], dynamics=hand["dynamics"], env=HAND,
                   episodes=SWEEP_EPISODES, seed=0, lookahead=LookaheadConfig(N=SWEEP_N, H=2, E=2), record_timing=False)
    rows = density_sweep(spec, SWEEP_MULTIPLIERS, root / "criterion7")
    reward = {(r["density_multiplier"], c): r[c].summary.average_reward for r in rows for c in ("policy", "lookahead")}
    degrade = all(reward[(32.0, c)] < reward[(1.0, c)] for c in ("policy", "lookahead"))
    gains = {m: reward[(m, "lookahead")] - reward[(m, "policy")] for m in (1.0, 2.0)}
    gain_ok = all(g >= 0 for g in gains.values())
    table = ", ".join(f"{m:g}x {reward[(m, 'policy')]:.0f}/{reward[(m, 'lookahead')]:.0f}" for m in SWEEP_MULTIPLIERS)
    ok = degrade and gain_ok
    report(7, ok, f"policy/lookahead reward by density: {table}")
    assert degrade, "reward at 32x density not below 1x for both controllers"
    assert gain_ok, f"lookahead below policy at 1x/2x: {gains}"


# ---------------------------------------------------------------- 8


def test_criterion_8_cost_direction(pendulum, root):
    spec = RunSpec(policy=pendulum["policy"], value=pendulum["value"], dynamics=pendulum["dynamics"], env=PENDULUM,
                   seed=0, lookahead=LookaheadConfig(N=1024, H=2, E=2))
    rows = benchmark_throughput(spec, Ns=(64, 1024), Hs=(1, 2), steps=300, warmup=100, episodes=BENCH_EPISODES,
                                out_dir=root / "criterion8")
    policy = rows[0]
    ok, parts = True, [f"policy {policy.steps_per_second:.0f} steps/s"]
    for r in rows[1:]:
        faster = policy.steps_per_second > r.steps_per_second
        costlier = True
        if r.successes >= 1 and policy.successes >= 1:
            costlier = r.runtime_per_success > policy.runtime_per_success
        ok &= faster and costlier
        parts.append(f"N={r.N} H={r.H} {r.steps_per_second:.0f} steps/s, "
                     f"{r.runtime_per_success if r.runtime_per_success is None else round(r.runtime_per_success, 3)} s/success")
    parts.append(f"policy {policy.runtime_per_success:.3f} s/success" if policy.runtime_per_success else "policy no success")
    report(8, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- 9


REPRO_CONFIG = {
    "ppo": {"num_envs": 8, "rollout_length": 64, "total_env_steps": 4096, "policy_hidden": [16, 16],
            "value_hidden": [16, 16], "minibatch_size": 128, "checkpoint_every": 4},
    "dynamics": {"transitions": 4000, "epochs": 3, "hidden": [32, 32]},
    "lookahead": {"N": 32},
    "eval": {"episodes": 4, "group_size": 4, "record_timing": False, "density_multipliers": [1.0, 4.0]},
}


def _run_pipeline(base: Path, cfg_path: str, env_name: str) -> None:
    out = base / env_name
    common = ["--config", cfg_path, "--seed", "7", "--threads", "1"]
    art = ["--policy", str(out / "ppo" / "policy_final.mblc"), "--value", str(out / "ppo" / "value_final.mblc"),
           "--dynamics", str(out / "dyn" / "dynamics.mblc")]
    steps = [
        ["train-policy", *common, "--out", str(out / "ppo")],
        ["collect-data", *common, "--out", str(out / "data"), "--policy", art[1]],
        ["train-dynamics", *common, "--out", str(out / "dyn"), "--data", str(out / "data" / "transitions.mbld")],
        ["eval", *common, "--out", str(out / "eval"), "--controller", "both", *art],
        ["sweep-density", *common, "--out", str(out / "sweep"), *art],
        ["cross-guide", *common, "--out", str(out / "cross"), *art],
    ]
    for argv in steps:
        assert main(argv) == 0, argv


def test_criterion_9_reproducibility(tmp_path):
    differing, compared = [], 0
    for env_name, env in (("pendulum", {"env_kind": "goal_pendulum"}), ("hand", {"env_kind": "planar_hand",
                                                                               "max_episode_steps": 100})):
        cfg = dict(REPRO_CONFIG, env=env)
        if env_name == "hand":
            cfg["dynamics"] = dict(cfg["dynamics"], variant="modular")
        path = tmp_path / f"{env_name}.yaml"
        path.write_text(yaml.safe_dump(cfg))
        for run in ("a", "b"):
            _run_pipeline(tmp_path / run, str(path), env_name)
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a" / env_name).rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b" / env_name).rglob("*") if p.is_file())
        if files_a != files_b:
            differing.append(f"{env_name}: file sets differ")
        for rel in files_a:
            compared += 1
            if (tmp_path / "a" / rel).read_bytes() != (tmp_path / "b" / rel).read_bytes():
                differing.append(str(rel))
    ok = not differing and compared > 0
    report(9, ok, f"{compared} artifacts compared over two full CLI pipelines"
                  + (f", differing: {differing}" if differing else ", all byte-identical"))
    assert ok

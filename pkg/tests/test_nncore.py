from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from mblook import nncore
from mblook.errors import DimensionError, FormatError, InputError, OptimizerError, StateError
from mblook.nncore.mlp import FoldedMlp, MlpSpec, cast_params


def _linear(w, b, act="identity"):
    spec = MlpSpec((len(w), len(w[0])), (act,), (False,), (0.0,))
    params = {"0.weight": np.array(w, np.float32), "0.bias": np.array(b, np.float32)}
    return spec, params


# ---------------------------------------------------------------- forward


def test_identity_network_passes_input_through():
    spec, params = _linear(np.eye(3), np.zeros(3))
    x = np.array([[1.5, -2.0, 0.25]], np.float32)
    out, _ = nncore.forward(spec, params, x)
    np.testing.assert_array_equal(out, x)


def test_scalar_relu_layer():
    spec, params = _linear([[2.0]], [1.0], act="relu")
    out, cache = nncore.forward(spec, params, np.array([[-3.0]], np.float32))
    assert cache.layers[0].pre[0, 0] == -5.0
    assert out[0, 0] == 0.0


def test_batchnorm_eval_with_unit_stats_is_passthrough():
    spec = MlpSpec((2, 2), ("identity",), (True,), (0.0,))
    params = nncore.init_params(spec, np.random.default_rng(0))
    params["0.weight"] = np.eye(2, dtype=np.float32)
    x = np.array([[0.3, -1.2], [4.0, 2.0]], np.float32)
    out, _ = nncore.forward(spec, params, x, mode="eval")
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), rtol=0, atol=1e-6)


def test_forward_rejects_wrong_width_and_non_finite():
    spec, params = _linear(np.eye(3), np.zeros(3))
    with pytest.raises(DimensionError):
        nncore.forward(spec, params, np.zeros((2, 4), np.float32))
    with pytest.raises(InputError):
        nncore.forward(spec, params, np.array([[0.0, np.nan, 1.0]], np.float32))


def test_train_mode_dropout_requires_rng():
    spec = MlpSpec.build([3, 4, 1], dropout=0.2)
    params = nncore.init_params(spec, np.random.default_rng(0))
    with pytest.raises(StateError):
        nncore.forward(spec, params, np.zeros((2, 3), np.float32), mode="train")


def test_eval_mode_is_bit_deterministic():
    spec = MlpSpec.build([5, 16, 16, 2], batchnorm=True, dropout=0.2)
    params = nncore.init_params(spec, np.random.default_rng(1))
    x = np.random.default_rng(2).standard_normal((32, 5)).astype(np.float32)
    a, _ = nncore.forward(spec, params, x, mode="eval")
    b, _ = nncore.forward(spec, params, x.copy(), mode="eval")
    assert a.tobytes() == b.tobytes()


def test_folded_network_matches_eval_forward():
    rng = np.random.default_rng(3)
    spec = MlpSpec.build([6, 16, 8, 3], activation="relu", batchnorm=True, dropout=0.2)
    params = nncore.init_params(spec, rng)
    for i in range(2):
        params[f"{i}.bn_mean"] = rng.standard_normal(params[f"{i}.bn_mean"].shape).astype(np.float32)
        params[f"{i}.bn_var"] = rng.uniform(0.5, 2.0, params[f"{i}.bn_var"].shape).astype(np.float32)
        params[f"{i}.bn_scale"] = rng.uniform(0.5, 1.5, params[f"{i}.bn_scale"].shape).astype(np.float32)
    x = rng.standard_normal((64, 6)).astype(np.float32)
    ref, _ = nncore.forward(spec, params, x)
    np.testing.assert_allclose(FoldedMlp.from_params(spec, params)(x), ref, rtol=1e-5, atol=1e-5)


# ---------------------------------------------------------------- backward


def test_linear_weight_gradient_is_the_input():
    spec, params = _linear([[0.5, -1.0], [2.0, 0.0], [1.0, 1.0]], [0.1, 0.2])
    x = np.array([[1.0, -2.0, 3.0]], np.float32)
    _, cache = nncore.forward(spec, params, x, mode="train")
    grads, gin = nncore.backward(spec, params, cache, np.ones((1, 2), np.float32))
    np.testing.assert_array_equal(grads["0.weight"], np.repeat(x.T, 2, axis=1))
    np.testing.assert_array_equal(grads["0.bias"], [1.0, 1.0])
    np.testing.assert_allclose(gin, params["0.weight"].sum(axis=1, keepdims=True).T)


def test_relu_blocks_gradient_at_negative_preactivation():
    spec, params = _linear([[2.0]], [1.0], act="relu")
    _, cache = nncore.forward(spec, params, np.array([[-3.0]], np.float32), mode="train")
    grads, gin = nncore.backward(spec, params, cache, np.ones((1, 1), np.float32))
    assert grads["0.weight"][0, 0] == 0.0 and gin[0, 0] == 0.0


def test_backward_without_cache_is_a_state_error():
    spec, params = _linear([[1.0]], [0.0])
    with pytest.raises(StateError):
        nncore.backward(spec, params, None, np.ones((1, 1)))


def test_backward_rejects_mismatched_output_gradient():
    spec, params = _linear([[1.0, 2.0]], [0.0, 0.0])
    _, cache = nncore.forward(spec, params, np.ones((3, 1), np.float32), mode="train")
    with pytest.raises(DimensionError):
        nncore.backward(spec, params, cache, np.ones((3, 1)))


def _finite_difference_check(spec: MlpSpec, seed: int, rows: int = 8, h: float = 1e-5) -> tuple[float, float]:
    """Worst elementwise relative error between analytic and central-difference gradients (float64).

    Also returns the smallest distance of a relu input from its kink.
    """
    rng = np.random.default_rng(seed)
    params = cast_params(nncore.init_params(spec, rng), np.float64)
    for i in range(spec.num_layers):
        params[f"{i}.bias"] = rng.uniform(-0.5, 0.5, params[f"{i}.bias"].shape)
        if spec.batchnorm[i]:
            params[f"{i}.bn_scale"] = rng.uniform(0.5, 1.5, params[f"{i}.bn_scale"].shape)
            params[f"{i}.bn_shift"] = rng.uniform(-0.5, 0.5, params[f"{i}.bn_shift"].shape)
    x = rng.standard_normal((rows, spec.input_dim))
    direction = rng.standard_normal((rows, spec.output_dim))

    def loss(p, inputs=x):
        out, _ = nncore.forward(spec, p, inputs, mode="train", rng=np.random.default_rng(seed))
        return float(np.sum(out * direction))

    _, cache = nncore.forward(spec, params, x, mode="train", rng=np.random.default_rng(seed))
    # central differences are meaningless across a relu kink
    kinks = [np.abs(lc.pre).min() for lc, act in zip(cache.layers, spec.activations) if act == "relu"]
    grads, gin = nncore.backward(spec, params, cache, direction)
    worst = 0.0

    # entries that are analytically zero (a bias feeding batch-norm) only carry
    # cancellation noise, so tiny gradients are compared on an absolute scale
    def rel(a, n):
        return abs(a - n) / max(abs(a), abs(n), 1e-4)

    for name in spec.trainable_names():
        theta = params[name]
        for idx in np.ndindex(theta.shape):
            old = theta[idx]
            theta[idx] = old + h
            up = loss(params)
            theta[idx] = old - h
            down = loss(params)
            theta[idx] = old
            worst = max(worst, rel(grads[name][idx], (up - down) / (2 * h)))
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        worst = max(worst, rel(gin[idx], (loss(params, xp) - loss(params, xm)) / (2 * h)))
    return worst, min(kinks, default=np.inf)


@st.composite
def mlp_specs(draw):
    n = draw(st.integers(1, 3))
    widths = [draw(st.integers(1, 16)) for _ in range(n + 1)]
    acts = tuple(draw(st.sampled_from(("relu", "tanh", "identity"))) for _ in range(n))
    bn = tuple(draw(st.booleans()) for _ in range(n))
    drop = tuple(draw(st.sampled_from((0.0, 0.2, 0.5))) for _ in range(n))
    return MlpSpec(tuple(widths), acts, bn, drop)


@settings(max_examples=50, deadline=None)
@given(spec=mlp_specs(), seed=st.integers(0, 2**31 - 1))
def test_gradients_match_central_differences(spec, seed):
    worst, kink = _finite_difference_check(spec, seed)
    assume(kink > 1e-3)
    assert worst <= 1e-4


def test_three_layer_network_gradient_check():
    spec = MlpSpec.build([4, 12, 9, 3], activation="relu", batchnorm=True, dropout=0.2)
    worst, kink = _finite_difference_check(spec, seed=11)
    assert kink > 1e-3 and worst <= 1e-4


def test_dropout_expectation_matches_eval_output():
    rng = np.random.default_rng(4)
    spec = MlpSpec.build([3, 8, 2], activation="identity", dropout=0.2)
    params = nncore.init_params(spec, rng)
    params = cast_params(params, np.float64)
    x = rng.standard_normal((1, 3))
    eval_out, _ = nncore.forward(spec, params, x, mode="eval")
    draws = np.stack([nncore.forward(spec, params, x, mode="train", rng=rng)[0][0] for _ in range(20_000)])
    mean = draws.mean(axis=0)
    sem = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
    assert np.all(np.abs(mean - eval_out[0]) <= 3 * sem)


def test_batchnorm_running_stats_use_momentum():
    spec = MlpSpec((2, 2), ("identity",), (True,), (0.0,))
    params = nncore.init_params(spec, np.random.default_rng(0))
    x = np.array([[1.0, 2.0], [3.0, 6.0]], np.float32)
    _, cache = nncore.forward(spec, params, x, mode="train")
    z = x @ params["0.weight"]
    nncore.update_batchnorm_stats(spec, params, cache)
    np.testing.assert_allclose(params["0.bn_mean"], 0.1 * z.mean(axis=0), rtol=1e-6)
    np.testing.assert_allclose(params["0.bn_var"], 0.9 + 0.1 * z.var(axis=0), rtol=1e-6)


# ---------------------------------------------------------------- Adam


def _adam_oracle(theta: float, grads, alpha=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= alpha * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(theta)
    return out


def test_adam_zero_gradient_is_identity():
    params = {"w": np.array([[1.0, -2.0]], np.float32)}
    before = params["w"].copy()
    state = nncore.adam_init(params)
    nncore.adam_step(params, {"w": np.zeros_like(before)}, state)
    assert params["w"].tobytes() == before.tobytes()
    assert state.step_count == 1


def test_adam_first_step_value():
    params = {"t": np.array([0.0])}
    state = nncore.adam_init(params, alpha=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8)
    nncore.adam_step(params, {"t": np.array([1.0])}, state)
    assert params["t"][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=0, abs=1e-15)
    assert params["t"][0] == pytest.approx(_adam_oracle(0.0, [1.0])[0], abs=1e-15)


def test_adam_on_quadratic_decreases_monotonically():
    params = {"t": np.array([1.0])}
    state = nncore.adam_init(params)
    traj = []
    for _ in range(100):
        nncore.adam_step(params, {"t": params["t"].copy()}, state)
        traj.append(float(params["t"][0]))
    mags = np.abs(traj)
    assert np.all(np.diff(np.concatenate([[1.0], mags])) < 0)
    # independent scalar simulation of the same update rule
    oracle, theta = [], 1.0
    m = v = 0.0
    for t in range(1, 101):
        g = theta
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 1e-3 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        oracle.append(theta)
    np.testing.assert_allclose(traj, oracle, rtol=0, atol=1e-12)


def test_adam_refuses_non_finite_gradient_without_touching_params():
    params = {"a": np.array([1.0, 2.0], np.float32), "b": np.array([3.0], np.float32)}
    state = nncore.adam_init(params)
    with pytest.raises(OptimizerError):
        nncore.adam_step(params, {"a": np.array([0.1, 0.2], np.float32), "b": np.array([np.inf], np.float32)}, state)
    np.testing.assert_array_equal(params["a"], [1.0, 2.0])
    assert state.step_count == 0
    assert not state.first_moment["a"].any()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.integers(1, 5))
def test_adam_zero_gradient_identity_property(values, steps):
    params = {"p": np.array(values, np.float64)}
    before = params["p"].copy()
    state = nncore.adam_init(params)
    for _ in range(steps):
        nncore.adam_step(params, {"p": np.zeros_like(before)}, state)
    np.testing.assert_array_equal(params["p"], before)
    assert state.step_count == steps


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(-5, 5))
def test_adam_matches_scalar_oracle(grads, theta0):
    params = {"t": np.array([theta0])}
    state = nncore.adam_init(params)
    got = []
    for g in grads:
        nncore.adam_step(params, {"t": np.array([g])}, state)
        got.append(params["t"][0])
    np.testing.assert_allclose(got, _adam_oracle(theta0, grads), rtol=0, atol=1e-12)


# ---------------------------------------------------------------- Gaussian heads


def test_gaussian_degenerate_variance_returns_mean():
    mean = np.array([[0.3, -0.7]])
    action, _ = nncore.gaussian_sample(mean, np.full_like(mean, -np.inf), np.random.default_rng(0))
    np.testing.assert_allclose(action, mean, atol=1e-7)


def test_standard_normal_log_density_at_zero():
    lp = nncore.gaussian_log_prob(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 3)))
    assert lp[0] == pytest.approx(-1.5 * math.log(2 * math.pi), abs=1e-12)
    assert -0.5 * math.log(2 * math.pi) == pytest.approx(-0.91894, abs=1e-5)


def test_gaussian_sample_is_seed_deterministic():
    mean, log_std = np.array([[0.1, 0.2]]), np.array([[-0.5, 0.3]])
    a1, l1 = nncore.gaussian_sample(mean, log_std, np.random.default_rng(7))
    a2, l2 = nncore.gaussian_sample(mean, log_std, np.random.default_rng(7))
    assert a1.tobytes() == a2.tobytes() and l1.tobytes() == l2.tobytes()


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 1.5), st.floats(-4, 4)), min_size=1, max_size=6),
)
def test_log_prob_matches_closed_form_density(entries):
    mean, log_std, z = (np.array([[e[i] for e in entries]]) for i in range(3))
    std = np.exp(log_std)
    action = mean + std * z
    dens = np.prod(np.exp(-0.5 * ((action - mean) / std) ** 2) / (std * math.sqrt(2 * math.pi)))
    assert nncore.gaussian_log_prob(mean, log_std, action)[0] == pytest.approx(math.log(dens), abs=1e-9)


def test_head_clamps_log_std_and_blocks_its_gradient():
    spec = nncore.GaussianHeadSpec.build(3, 2, hidden=(4,))
    params = cast_params(nncore.init_head_params(spec, np.random.default_rng(0)), np.float64)
    params["logstd.0.bias"] = np.array([50.0, 0.0])
    obs = np.random.default_rng(1).standard_normal((5, 3))
    mean, log_std, cache = nncore.head_forward(spec, params, obs, mode="train")
    assert np.all(log_std[:, 0] == nncore.LOG_STD_MAX)
    grads, _ = nncore.head_backward(spec, params, cache, np.zeros_like(mean), np.ones_like(log_std))
    assert grads["logstd.0.bias"][0] == 0.0 and grads["logstd.0.bias"][1] == 5.0


# ---------------------------------------------------------------- checkpoints


def _random_policy_checkpoint(seed: int = 0) -> nncore.Checkpoint:
    spec = nncore.GaussianHeadSpec.build(6, 1, hidden=(8, 8))
    params = nncore.init_head_params(spec, np.random.default_rng(seed))
    return nncore.Checkpoint(
        "policy",
        {"head": spec.to_dict()},
        params,
        {"obs_mean": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5], "obs_std": [1.0] * 6},
        {"seed": seed, "run_id": "abc", "creation_step": 12},
    )


def test_checkpoint_roundtrip_is_bit_identical(tmp_path):
    ckpt = _random_policy_checkpoint()
    path = tmp_path / "p.mblc"
    nncore.save(path, ckpt)
    loaded = nncore.load(path)
    assert loaded == ckpt
    for k in ckpt.params:
        assert loaded.params[k].tobytes() == ckpt.params[k].tobytes()
    nncore.save(tmp_path / "q.mblc", loaded)
    assert (tmp_path / "q.mblc").read_bytes() == path.read_bytes()


def test_truncated_checkpoint_is_a_format_error(tmp_path):
    path = tmp_path / "p.mblc"
    nncore.save(path, _random_policy_checkpoint())
    blob = path.read_bytes()
    path.write_bytes(blob[:-1])
    with pytest.raises(FormatError) as info:
        nncore.load(path)
    assert info.value.offset > 0


def test_wrong_magic_names_the_expected_magic(tmp_path):
    path = tmp_path / "p.mblc"
    nncore.save(path, _random_policy_checkpoint())
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(FormatError, match="MBLC") as info:
        nncore.load(path)
    assert info.value.offset == 0


def test_wrong_version_and_trailing_bytes(tmp_path):
    blob = _random_policy_checkpoint().to_bytes()
    with pytest.raises(FormatError, match="version"):
        nncore.Checkpoint.from_bytes(blob[:4] + b"\x02\x00" + blob[6:])
    with pytest.raises(FormatError, match="trailing"):
        nncore.Checkpoint.from_bytes(blob + b"\x00")


def test_non_positive_std_is_rejected():
    with pytest.raises(ValueError):
        nncore.Checkpoint("value", {}, {}, {"obs_std": [1.0, 0.0]})


@settings(max_examples=30, deadline=None)
@given(
    st.dictionaries(
        st.text("abcdefgh.", min_size=1, max_size=8),
        st.lists(st.integers(1, 4), min_size=0, max_size=3),
        max_size=4,
    ),
    st.integers(0, 2**32 - 1),
    st.sampled_from(("policy", "value", "dynamics", "single_joint")),
)
def test_checkpoint_serialization_roundtrip_property(shapes, seed, kind):
    rng = np.random.default_rng(seed)
    params = {k: rng.standard_normal(tuple(s)).astype(np.float32) for k, s in shapes.items()}
    ckpt = nncore.Checkpoint(kind, {"x": [1, 2]}, params, {"in_mean": [0.5], "in_std": [2.0]}, {"seed": seed})
    blob = ckpt.to_bytes()
    back = nncore.Checkpoint.from_bytes(blob)
    assert back == ckpt
    assert back.to_bytes() == blob

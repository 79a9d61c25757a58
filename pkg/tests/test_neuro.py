import json

import numpy as np
import pytest

from indoornav.exceptions import NeuroError
from indoornav.neuro import (
    AvgPool2D,
    Conv2D,
    Dense,
    LSTMCell,
    LSTMState,
    ParameterStore,
    ReLU,
    RMSProp,
    SiameseActorCritic,
    a3c_loss,
    discounted_returns,
    load_checkpoint,
    numeric_gradient,
    relative_error,
    save_checkpoint,
)

TOL = 1e-5
SEEDS = range(20)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(99)


def check_layer(layer, params, x, rng):
    """Gradient-check a single-input layer against the loss sum(y * r)."""
    y, _ = layer.forward(params, x)
    r = rng.normal(size=y.shape)

    def loss():
        return float((layer.forward(params, x)[0] * r).sum())

    _, cache = layer.forward(params, x)
    dx, grads = layer.backward(params, cache, r)
    assert relative_error(dx, numeric_gradient(loss, x)) < TOL
    for name, g in grads.items():
        assert relative_error(g, numeric_gradient(loss, params[name])) < TOL, name


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradients(seed):
    rng = np.random.default_rng(seed)
    layer = Dense("d", 5, 3)
    params = layer.init_params(rng)
    params["d.b"] = rng.normal(size=3)
    check_layer(layer, params, rng.normal(size=(4, 5)), rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 6))
    x[np.abs(x) < 0.05] = 0.5
    check_layer(ReLU("r"), {}, x, rng)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("bias", [False, True])
def test_conv_gradients(seed, bias):
    rng = np.random.default_rng(seed)
    layer = Conv2D("c", 3, 4, bias=bias)
    params = layer.init_params(rng)
    if bias:
        params["c.b"] = rng.normal(size=4)
    check_layer(layer, params, rng.normal(size=(2, 5, 5, 3)), rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_avgpool_gradients(seed):
    rng = np.random.default_rng(seed)
    check_layer(AvgPool2D("p", 2), {}, rng.normal(size=(2, 4, 6, 3)), rng)


def test_avgpool_requires_divisible_input(rng):
    with pytest.raises(NeuroError):
        AvgPool2D("p", 3).forward({}, rng.normal(size=(1, 4, 4, 1)))


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_gradients(seed):
    rng = np.random.default_rng(seed)
    cell = LSTMCell("l", 3, 4)
    params = cell.init_params(rng)
    x = rng.normal(size=(1, 3))
    state = LSTMState(rng.normal(size=(1, 4)), rng.normal(size=(1, 4)))
    rh = rng.normal(size=(1, 4))
    rc = rng.normal(size=(1, 4))

    def loss():
        out, _ = cell.forward(params, x, state)
        return float((out.hidden * rh).sum() + (out.cell * rc).sum())

    _, cache = cell.forward(params, x, state)
    dx, dh_prev, dc_prev, grads = cell.backward(params, cache, rh, rc)
    assert relative_error(dx, numeric_gradient(loss, x)) < TOL
    assert relative_error(dh_prev, numeric_gradient(loss, state.hidden)) < TOL
    assert relative_error(dc_prev, numeric_gradient(loss, state.cell)) < TOL
    for name, g in grads.items():
        assert relative_error(g, numeric_gradient(loss, params[name])) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_backprop_through_time(seed):
    rng = np.random.default_rng(seed)
    cell = LSTMCell("l", 3, 4)
    params = cell.init_params(rng)
    xs = rng.normal(size=(5, 3))
    h0 = rng.normal(size=(1, 4))
    c0 = rng.normal(size=(1, 4))
    r = rng.normal(size=(5, 4))

    def unroll():
        state, caches, hs = LSTMState(h0, c0), [], []
        for t in range(5):
            state, cache = cell.forward(params, xs[t : t + 1], state)
            caches.append(cache)
            hs.append(state.hidden[0])
        return np.array(hs), caches

    def loss():
        return float((unroll()[0] * r).sum())

    _, caches = unroll()
    dxs = np.zeros_like(xs)
    dh, dc = np.zeros((1, 4)), np.zeros((1, 4))
    total = {}
    for t in reversed(range(5)):
        dx, dh, dc, grads = cell.backward(params, caches[t], r[t : t + 1] + dh, dc)
        dxs[t] = dx[0]
        for name, g in grads.items():
            total[name] = total.get(name, 0) + g
    assert relative_error(dxs, numeric_gradient(loss, xs)) < TOL
    assert relative_error(dh, numeric_gradient(loss, h0)) < TOL
    assert relative_error(dc, numeric_gradient(loss, c0)) < TOL
    for name, g in total.items():
        assert relative_error(g, numeric_gradient(loss, params[name])) < TOL, name


def test_backward_without_forward(rng):
    layer = Dense("d", 2, 2)
    with pytest.raises(NeuroError) as exc:
        layer.backward(layer.init_params(rng), None, np.zeros((1, 2)))
    assert exc.value.code == "no-forward"


def test_dense_shape_mismatch(rng):
    layer = Dense("d", 2, 2)
    with pytest.raises(NeuroError) as exc:
        layer.forward(layer.init_params(rng), np.zeros((1, 3)))
    assert exc.value.code == "shape-mismatch"



def build_network(rng, lstm_hidden):
    net = SiameseActorCritic(5, embed_dim=6, fusion_dim=6, head_dim=5, lstm_hidden=lstm_hidden)
    net.add_head("scene")
    params = {**net.init_shared(rng), **net.init_head("scene", rng)}
    # Move the small-scale output layers away from zero so every path carries signal.
    params["head/scene/policy.W"] = rng.normal(size=params["head/scene/policy.W"].shape)
    params["head/scene/value.W"] = rng.normal(size=params["head/scene/value.W"].shape)
    return net, params


def check_network(net, params, obs, target, rng):
    T = len(obs)
    r_logits = rng.normal(size=(T, 4))
    r_values = rng.normal(size=T)

    def loss():
        out, _ = net.forward(params, obs, target, "scene")
        return float((out.logits * r_logits).sum() + (out.values * r_values).sum())

    _, cache = net.forward(params, obs, target, "scene")
    grads = net.backward(params, cache, r_logits, r_values)
    assert set(grads) == set(params)
    for name, g in grads.items():
        assert relative_error(g, numeric_gradient(loss, params[name])) < 1e-4, name


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("lstm_hidden", [None, 4])
def test_network_gradients(seed, lstm_hidden):
    rng = np.random.default_rng(seed)
    net, params = build_network(rng, lstm_hidden)
    check_network(net, params, rng.normal(size=(3, 5)), rng.normal(size=(3, 5)), rng)


@pytest.mark.parametrize("seed", range(5))
def test_network_backprop_through_five_steps(seed):
    rng = np.random.default_rng(seed)
    net, params = build_network(rng, 4)
    check_network(net, params, rng.normal(size=(5, 5)), rng.normal(size=(5, 5)), rng)


@pytest.mark.parametrize("seed", range(5))
def test_branch_gradients_sum_to_full(seed):
    rng = np.random.default_rng(seed)
    net, params = build_network(rng, 4)
    obs = rng.normal(size=(3, 5))
    target = rng.normal(size=(3, 5))
    d_logits = rng.normal(size=(3, 4))
    d_values = rng.normal(size=3)
    _, cache = net.forward(params, obs, target, "scene")
    full = net.backward(params, cache, d_logits, d_values)
    from_obs = net.backward(params, cache, d_logits, d_values, branches={"obs"})
    from_target = net.backward(params, cache, d_logits, d_values, branches={"target"})
    for name in ("embed.W", "embed.b"):
        np.testing.assert_allclose(from_obs[name] + from_target[name], full[name])
        assert not np.allclose(from_obs[name], full[name])
    for name in set(full) - {"embed.W", "embed.b"}:
        np.testing.assert_array_equal(from_obs[name], full[name])
        np.testing.assert_array_equal(from_target[name], full[name])


def test_embedding_weights_are_shared_by_both_branches(rng):
    net, params = build_network(rng, None)
    obs = rng.normal(size=(2, 5))
    target = rng.normal(size=(2, 5))
    before, _ = net.forward(params, obs, target, "scene")
    # Shift the shared bias; both branches read it.
    params["embed.b"] = params["embed.b"] + 10.0
    after, _ = net.forward(params, obs, target, "scene")
    for branch in (0, 1):
        assert not np.allclose(before.embeddings[branch], after.embeddings[branch])


def test_network_rejects_non_finite_observation(rng):
    net, params = build_network(rng, 4)
    obs = rng.normal(size=(2, 5))
    obs[1, 3] = np.nan
    with pytest.raises(NeuroError) as exc:
        net.forward(params, obs, rng.normal(size=(2, 5)), "scene")
    assert exc.value.code == "non-finite"


def test_dense_rejects_non_finite_output(rng):
    layer = Dense("d", 2, 2)
    params = layer.init_params(rng)
    params["d.W"][0, 0] = np.inf
    with pytest.raises(NeuroError) as exc:
        layer.forward(params, np.ones((1, 2)))
    assert exc.value.code == "non-finite"


def test_network_head_management(rng):
    net = SiameseActorCritic(5, embed_dim=4, fusion_dim=4, head_dim=4)
    net.add_head("a")
    with pytest.raises(NeuroError):
        net.add_head("a")
    with pytest.raises(NeuroError):
        net.head_layers("b")
    assert net.heads == ["a"]
    assert "embed.W" in net.shared_param_names()
    assert net.head_param_names("a")[0] == "head/a/hidden.W"
    assert net.layer_specs()[0].shared_with == ("obs", "target")


def test_discounted_returns():
    np.testing.assert_allclose(discounted_returns(np.array([1.0, 0.0, 1.0]), 0.5, 2.0), [1.5, 1.0, 2.0])


def test_a3c_logit_gradient(rng):
    logits = rng.normal(size=(5, 4))
    values = rng.normal(size=5)
    actions = rng.integers(4, size=5)
    rewards = rng.normal(size=5)

    def total():
        return a3c_loss(logits, values, actions, rewards, 0.9, 0.01, 0.3).total

    result = a3c_loss(logits, values, actions, rewards, 0.9, 0.01, 0.3)
    assert relative_error(result.d_logits, numeric_gradient(total, logits)) < TOL


def test_a3c_value_gradient_comes_from_value_term(rng):
    logits = rng.normal(size=(5, 4))
    values = rng.normal(size=5)
    actions = rng.integers(4, size=5)
    rewards = rng.normal(size=5)

    def value_term():
        return 0.5 * a3c_loss(logits, values, actions, rewards, 0.9, 0.01, 0.3).value

    result = a3c_loss(logits, values, actions, rewards, 0.9, 0.01, 0.3)
    assert relative_error(result.d_values, numeric_gradient(value_term, values)) < TOL
    np.testing.assert_allclose(result.advantages, result.returns - values)


def test_a3c_loss_at_known_values():
    result = a3c_loss(np.zeros((1, 4)), np.array([1.0]), np.array([2]), np.array([3.0]), beta_entropy=0.0)
    # R = 3, A = 2, uniform policy
    assert result.policy == pytest.approx(2 * np.log(4))
    assert result.value == pytest.approx(2.0)
    np.testing.assert_allclose(result.d_logits, [[0.5, 0.5, -1.5, 0.5]])
    np.testing.assert_allclose(result.d_values, [-1.0])


def test_a3c_length_mismatch():
    with pytest.raises(NeuroError) as exc:
        a3c_loss(np.zeros((2, 4)), np.zeros(3), np.zeros(2), np.zeros(2))
    assert exc.value.code == "length-mismatch"


def test_rmsprop_step():
    store = ParameterStore({"w": np.array([1.0, 2.0])})
    opt = RMSProp(learning_rate=0.1, decay=0.9, epsilon=0.0, max_grad_norm=None)
    opt.apply_gradients(store, {"w": np.array([1.0, -2.0])})
    # acc = 0.1 * g^2, step = lr * g / sqrt(acc) = lr * sign(g) / sqrt(0.1)
    np.testing.assert_allclose(store["w"], [1.0 - 0.1 / np.sqrt(0.1), 2.0 + 0.1 / np.sqrt(0.1)])
    np.testing.assert_allclose(opt.accumulators["w"], [0.1, 0.4])
    assert store.version == 1


def test_rmsprop_clips_global_norm():
    store = ParameterStore({"a": np.zeros(1), "b": np.zeros(1)})
    opt = RMSProp(learning_rate=1.0, decay=0.0, epsilon=0.0, max_grad_norm=1.0)
    opt.apply_gradients(store, {"a": np.array([3.0]), "b": np.array([4.0])})
    np.testing.assert_allclose(opt.accumulators["a"], [0.36])
    np.testing.assert_allclose(opt.accumulators["b"], [0.64])


def test_rmsprop_rejects_non_finite():
    store = ParameterStore({"w": np.ones(2)})
    digest = store.digest()
    with pytest.raises(NeuroError) as exc:
        RMSProp().apply_gradients(store, {"w": np.array([np.nan, 1.0])})
    assert exc.value.code == "non-finite-gradient"
    assert store.digest() == digest


def test_rmsprop_skips_frozen_parameters():
    store = ParameterStore({"shared": np.ones(2), "head": np.ones(2)})
    opt = RMSProp(trainable=lambda name: name != "shared")
    opt.apply_gradients(store, {"shared": np.ones(2), "head": np.ones(2)})
    np.testing.assert_array_equal(store["shared"], np.ones(2))
    assert (store["head"] < 1).all()


def test_parameter_store_commits_new_arrays():
    store = ParameterStore({"w": np.zeros(3)}, strict=True)
    before = store.snapshot()
    RMSProp(learning_rate=0.5).apply_gradients(store, {"w": np.ones(3)})
    assert (before["w"] == 0).all()
    assert store["w"] is not before["w"]
    with pytest.raises(NeuroError):
        store.add("w", np.zeros(3))
    with pytest.raises(NeuroError):
        store.assign("w", np.zeros(4))


def test_checkpoint_roundtrip(tmp_path, rng):
    net = SiameseActorCritic(5, embed_dim=4, fusion_dim=4, head_dim=4, lstm_hidden=3)
    net.add_head("office-0001")
    store = ParameterStore({**net.init_shared(rng), **net.init_head("office-0001", rng)})
    opt = RMSProp()
    opt.apply_gradients(store, {k: np.ones_like(v) for k, v in store.items()})
    path = save_checkpoint(tmp_path / "model", store, opt, net.layer_specs(), {"variant": "lstm"})
    params, rms, sidecar = load_checkpoint(path)
    assert set(params) == set(store)
    for name in store:
        np.testing.assert_array_equal(params[name], store[name])
        np.testing.assert_array_equal(rms[name], opt.accumulators[name])
    assert sidecar["meta"] == {"variant": "lstm"}
    assert [layer["name"] for layer in sidecar["layers"]][:2] == ["embed", "embed_relu"]
    assert sidecar["optimizer"]["steps"] == 1


def test_checkpoint_errors(tmp_path):
    with pytest.raises(NeuroError) as exc:
        load_checkpoint(tmp_path / "missing")
    assert exc.value.code == "bad-checkpoint"
    path = save_checkpoint(tmp_path / "model", ParameterStore({"w": np.zeros(1)}))
    sidecar = path.with_suffix(".json")
    raw = json.loads(sidecar.read_text())
    raw["version"] = 0
    sidecar.write_text(json.dumps(raw))
    with pytest.raises(NeuroError):
        load_checkpoint(path)

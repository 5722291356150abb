import json
import math

import numpy as np
import pytest

import oracles
from actar import nn
from actar.errors import Corrupt, DimensionMismatch, LabelOutOfRange, VersionMismatch


def random_spec(rng, output="identity", act=None):
    depth = int(rng.integers(0, 3))
    widths = [int(rng.integers(1, 6)) for _ in range(depth + 2)]
    if output == "softmax":
        widths[-1] = max(widths[-1], 2)
    acts = tuple(act or rng.choice(["tanh", "relu", "identity"]) for _ in range(depth))
    return nn.MLPSpec(tuple(widths), acts, output, int(rng.integers(0, 1000)))


def test_zero_network_outputs_zero():
    spec = nn.MLPSpec((3, 4, 2), ("identity",))
    params = nn.MLPParams([np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    assert np.array_equal(nn.predict(spec, params, np.ones((5, 3))), np.zeros((5, 2)))


def test_softmax_uniform():
    for n in (2, 5, 12):
        assert np.allclose(nn.softmax(np.zeros((1, n))), 1.0 / n, atol=1e-15)


def test_two_layer_by_hand():
    spec = nn.MLPSpec((2, 2, 1), ("tanh",))
    params = nn.MLPParams([np.array([[1.0, -1.0], [0.5, 2.0]]), np.array([[3.0], [-1.0]])],
                          [np.array([0.1, 0.0]), np.array([0.25])])
    x = [0.2, -0.4]
    h = [math.tanh(0.2 * 1.0 + -0.4 * 0.5 + 0.1), math.tanh(0.2 * -1.0 + -0.4 * 2.0)]
    want = 3.0 * h[0] - 1.0 * h[1] + 0.25
    assert abs(nn.predict(spec, params, np.array([x]))[0, 0] - want) < 1e-15


def test_forward_dimension_mismatch():
    spec = nn.MLPSpec((3, 2))
    with pytest.raises(DimensionMismatch):
        nn.forward(spec, nn.init_params(spec), np.ones((1, 4)))


def test_spec_rejects_degenerate():
    with pytest.raises(ValueError):
        nn.MLPSpec((3,))
    with pytest.raises(ValueError):
        nn.MLPSpec((3, 0, 2), ("tanh",))
    with pytest.raises(ValueError):
        nn.MLPSpec((3, 4, 2), ())


def test_glorot_bounds_and_seed():
    spec = nn.MLPSpec((30, 20, 10), ("tanh",), seed=4)
    a, b = nn.init_params(spec), nn.init_params(spec)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert np.abs(a.weights[0]).max() <= math.sqrt(6 / 50)
    assert all(np.all(bias == 0) for bias in a.biases)


def test_mse_examples():
    assert nn.mse_loss(np.ones((3, 2)), np.ones((3, 2)))[0] == 0.0
    loss, grad = nn.mse_loss(np.zeros((2, 1)), np.ones((2, 1)))
    assert loss == 1.0
    assert np.array_equal(grad, np.ones((2, 1)))
    with pytest.raises(DimensionMismatch):
        nn.mse_loss(np.zeros((2, 1)), np.zeros((1, 2)))


def test_cross_entropy_examples():
    for n in (2, 3, 7):
        assert abs(nn.cross_entropy_loss(np.zeros((4, n)), [0, 1, 1, 0])[0] - math.log(n)) < 1e-12
    logits = np.array([[800.0, 0.0, 0.0]])
    assert nn.cross_entropy_loss(logits, [0])[0] == 0.0
    with pytest.raises(LabelOutOfRange):
        nn.cross_entropy_loss(np.zeros((1, 3)), [3])


def test_losses_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        m, d = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        c, chat = rng.normal(size=(m, d)), rng.normal(size=(m, d))
        assert abs(nn.mse_loss(c, chat)[0] - oracles.mse_loss(c.tolist(), chat.tolist())) < 1e-9
        k = int(rng.integers(2, 6))
        logits = rng.normal(size=(m, k)) * 4
        labels = rng.integers(0, k, size=m)
        want = oracles.cross_entropy_loss(logits.tolist(), labels.tolist())
        assert abs(nn.cross_entropy_loss(logits, labels)[0] - want) < 1e-9


def _numeric_grad(fn, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = fn(x)
        x[i] = old - h
        down = fn(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    c, chat = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    analytic = nn.mse_loss(c, chat)[1]
    numeric = _numeric_grad(lambda p: nn.mse_loss(c, p)[0], chat.copy())
    assert np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-6)) < 1e-6
    logits, labels = rng.normal(size=(4, 3)), [0, 2, 1, 2]
    analytic = nn.cross_entropy_loss(logits, labels)[1]
    numeric = _numeric_grad(lambda z: nn.cross_entropy_loss(z, labels)[0], logits.copy())
    assert np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-6)) < 1e-6


def test_adam_zero_gradient():
    p = [np.array([1.0, -2.0])]
    state = nn.AdamState.create(p)
    nn.adam_step(p, [np.zeros(2)], state)
    assert np.array_equal(p[0], [1.0, -2.0]) and state.t == 1


def test_adam_first_step():
    p = [np.array([0.0])]
    state = nn.AdamState.create(p, lr=1e-3)
    assert state.eps == 1e-3
    nn.adam_step(p, [np.array([1.0])], state)
    # bias-corrected moments are exactly g and g^2 on the first step
    assert abs(p[0][0] - (-1e-3 / (1 + 1e-3))) < 1e-15
    assert abs(p[0][0] + 9.990e-4) < 1e-7


def test_adam_matches_textbook_update():
    rng = np.random.default_rng(2)
    p = [rng.normal(size=(3, 2))]
    ref = p[0].copy()
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    state = nn.AdamState.create(p, lr=0.01, eps=1e-8)
    for t in range(1, 6):
        g = rng.normal(size=(3, 2))
        nn.adam_step(p, [g], state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.max(np.abs(p[0] - ref)) < 1e-12


def test_adam_shape_mismatch():
    p = [np.zeros(3)]
    with pytest.raises(DimensionMismatch):
        nn.adam_step(p, [np.zeros(4)], nn.AdamState.create(p))


def _train(seed):
    spec = nn.MLPSpec((4, 6, 3), ("tanh",), "softmax", seed)
    params = nn.init_params(spec)
    state = nn.AdamState.create(params.arrays())
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(20, 4)), rng.integers(0, 3, size=20)
    for _ in range(5):
        for idx in nn.minibatches(20, 8, rng):
            cache = nn.forward(spec, params, x[idx])
            _, g = nn.cross_entropy_loss(cache.logits, y[idx])
            grads, _ = nn.backward(spec, params, cache, g)
            nn.adam_step(params.arrays(), grads.arrays(), state)
    return params


def test_training_is_deterministic():
    a, b = _train(3), _train(3)
    assert all(np.array_equal(u, v) for u, v in zip(a.arrays(), b.arrays()))


def test_minibatches_cover_permutation():
    idx = np.concatenate(list(nn.minibatches(10, 3, np.random.default_rng(0))))
    assert sorted(idx.tolist()) == list(range(10))


def test_grad_check_linear_mse():
    rng = np.random.default_rng(5)
    spec = nn.MLPSpec((3, 2), seed=1)
    target = rng.normal(size=(4, 2))
    err = nn.grad_check(spec, nn.init_params(spec), lambda z: nn.mse_loss(target, z), rng.normal(size=(4, 3)))
    assert err < 1e-8


def test_grad_check_tanh_cross_entropy():
    rng = np.random.default_rng(6)
    spec = nn.MLPSpec((4, 5, 5, 3), ("tanh", "tanh"), "softmax", seed=2)
    labels = rng.integers(0, 3, size=6)
    err = nn.grad_check(spec, nn.init_params(spec), lambda z: nn.cross_entropy_loss(z, labels),
                        rng.normal(size=(6, 4)), h=1e-5)
    assert err < 1e-4


def test_grad_check_random_specs():
    rng = np.random.default_rng(8)
    for _ in range(20):
        out = str(rng.choice(["identity", "softmax"]))
        spec = random_spec(rng, out, act="tanh")
        n = int(rng.integers(1, 5))
        batch = rng.normal(size=(n, spec.widths[0]))
        if out == "softmax":
            labels = rng.integers(0, spec.widths[-1], size=n)
            loss = lambda z, labels=labels: nn.cross_entropy_loss(z, labels)  # noqa: E731
        else:
            target = rng.normal(size=(n, spec.widths[-1]))
            loss = lambda z, target=target: nn.mse_loss(target, z)  # noqa: E731
        assert nn.grad_check(spec, nn.init_params(spec), loss, batch) < 1e-4


def test_input_gradient():
    rng = np.random.default_rng(9)
    spec = nn.MLPSpec((3, 4, 2), ("tanh",), seed=3)
    params = nn.init_params(spec)
    x = rng.normal(size=(2, 3))
    target = rng.normal(size=(2, 2))
    cache = nn.forward(spec, params, x)
    _, g = nn.mse_loss(target, cache.output)
    _, gx = nn.backward(spec, params, cache, g, input_grad=True)
    numeric = _numeric_grad(lambda v: nn.mse_loss(target, nn.predict(spec, params, v))[0], x.copy())
    assert np.max(np.abs(gx - numeric)) < 1e-7


def test_persistence_bit_exact():
    spec = nn.MLPSpec((5, 7, 3), ("relu",), "softmax", seed=11)
    params = nn.init_params(spec)
    params.biases[0][:] = np.random.default_rng(0).normal(size=7) / 3
    doc = json.loads(json.dumps(nn.mlp_to_dict(spec, params, {"lr": 1e-3})))
    spec2, params2, opt = nn.mlp_from_dict(doc)
    assert spec2 == spec and opt == {"lr": 1e-3}
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), params2.arrays()))


def test_large_array_encoding():
    a = np.random.default_rng(0).normal(size=(3, 5))
    doc = nn.encode_array(a, large=4)
    assert "b64" in doc
    assert np.array_equal(nn.decode_array(json.loads(json.dumps(doc))), a)


def test_persistence_errors():
    spec = nn.MLPSpec((2, 2))
    doc = nn.mlp_to_dict(spec, nn.init_params(spec))
    with pytest.raises(VersionMismatch):
        nn.mlp_from_dict(dict(doc, version=99))
    with pytest.raises(Corrupt):
        nn.mlp_from_dict({"format": "something else"})
    broken = json.loads(json.dumps(doc))
    broken["weights"][0]["data"] = broken["weights"][0]["data"][:-1]
    with pytest.raises(Corrupt):
        nn.mlp_from_dict(broken)

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chartpat.errors import ShapeMismatch, StaleCache, ValidationError
from chartpat.nn import (LSTM, SGD, Adam, Conv1D, Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU, Sigmoid, Tanh,
                         backward, bce_batch, bce_loss, build_model, forward, grad_check, load_model, lstm_step,
                         optimizer_step, predict_proba, save_model)

from oracles import naive_conv1d, naive_conv2d


def one_layer(layer, in_shape, seed=0, **weights):
    m = build_model([layer], in_shape, seed)
    if weights:
        m.set_weights({f"0.{k}": np.asarray(v, dtype=float) for k, v in weights.items()})
    return m


def test_dense_identity():
    m = one_layer(Dense(2, 2), (2,), W=np.eye(2), b=np.zeros(2))
    assert forward(m, np.array([[3.0, 4.0]]))[0].tolist() == [[3.0, 4.0]]


def test_relu_values():
    m = one_layer(ReLU(), (3,))
    assert forward(m, np.array([[-1.0, 0.0, 2.0]]))[0].tolist() == [[0.0, 0.0, 2.0]]


def test_conv1d_hand_example():
    m = one_layer(Conv1D(1, 1, 3), (1, 4), W=[[[1.0, 0.0, -1.0]]], b=[0.0])
    y, _ = forward(m, np.array([[[1.0, 2.0, 4.0, 8.0]]]))
    assert y.tolist() == [[[-3.0, -6.0]]]


def lstm_weights(units, input_dim, value=0.0):
    return {"W": np.full((4 * units, input_dim), value), "U": np.full((4 * units, units), value),
            "b": np.full(4 * units, value)}


def test_lstm_step_zero_weights():
    w = lstm_weights(3, 2)
    h, c, _ = lstm_step(np.array([[0.7, -2.0]]), np.zeros((1, 3)), np.zeros((1, 3)), w)
    assert np.all(h == 0) and np.all(c == 0)


def test_lstm_step_saturated_gates_keep_cell():
    u = 4
    w = lstm_weights(u, 2)
    w["b"][:u] = -50.0         # input gate shut
    w["b"][u:2 * u] = 50.0     # forget gate open
    c0 = np.array([[0.3, -0.8, 1.5, 0.0]])
    _, c, _ = lstm_step(np.array([[1.0, -1.0]]), np.full((1, u), 0.2), c0, w)
    assert np.allclose(c, c0, atol=1e-6, rtol=0)


def test_lstm_step_scalar():
    h, c, _ = lstm_step(np.ones((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), lstm_weights(1, 1, 0.1))
    # every gate sees 0.1 * 1 + 0.1 = 0.2
    assert c[0, 0] == pytest.approx(0.10852366129008935, abs=1e-12)
    assert h[0, 0] == pytest.approx(0.05943684462278488, abs=1e-12)


def test_lstm_step_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        lstm_step(np.ones((1, 3)), np.zeros((1, 2)), np.zeros((1, 2)), lstm_weights(2, 2))


CHECKED = [
    ([Dense(6, 4)], (6,)),
    ([Conv1D(3, 4, 3, 2)], (3, 11)),
    ([Conv2D(2, 3, 3, 2)], (2, 9, 9)),
    ([MaxPool2D(2)], (2, 6, 6)),
    ([ReLU()], (7,)),
    ([Sigmoid()], (7,)),
    ([Tanh()], (7,)),
    ([Flatten(), Dense(12, 2)], (3, 4)),
    ([Dropout(0.5), Dense(5, 1)], (5,)),
    ([LSTM(4, 10), Dense(10, 1), Sigmoid()], (4, 12)),
    ([Conv2D(1, 4, 3), ReLU(), MaxPool2D(2), Conv2D(4, 4, 3), Flatten(), Dense(100, 1), Sigmoid()], (1, 16, 16)),
]


@pytest.mark.parametrize("layers,shape", CHECKED, ids=lambda v: type(v[0]).__name__ if isinstance(v, list) else "")
def test_grad_check(layers, shape):
    rng = np.random.default_rng(1)
    m = build_model(layers, shape, seed=2)
    x = rng.standard_normal((3, *shape))
    if isinstance(layers[0], MaxPool2D):
        # distinct values keep argmax away from ties under the eps nudge
        x = rng.permutation(x.size).reshape(x.shape) / 10.0
    if isinstance(layers[-1], Sigmoid) and len(layers) > 1:
        rep = grad_check(m, x, y=np.array([1.0, 0.0, 1.0]))
    else:
        rep = grad_check(m, x)
    assert rep.max_rel_error < 1e-4, rep.per_tensor


def test_zero_loss_grad_gives_zero_grads():
    m = build_model([LSTM(2, 3), Dense(3, 1)], (2, 5), seed=0)
    out, cache = forward(m, np.ones((2, 2, 5)))
    grads = backward(m, cache, np.zeros_like(out))
    assert set(grads) == set(m.weights)
    assert all(not g.any() for g in grads.values())


def test_dense_weight_gradient_is_x_delta():
    m = build_model([Dense(3, 2)], (3,), seed=0)
    x = np.array([[0.5, -1.0, 2.0]])
    delta = np.array([[0.25, -3.0]])
    out, cache = forward(m, x)
    g = backward(m, cache, delta)
    assert g["0.W"][2, 1] == pytest.approx(2.0 * -3.0)
    assert np.allclose(g["0.W"], np.outer(x[0], delta[0]))
    assert np.allclose(g["0.b"], delta[0])


def test_bce_examples():
    loss, _ = bce_loss(0.5, 1)
    assert loss == pytest.approx(np.log(2), abs=1e-12)
    assert bce_loss(1.0, 1)[0] < 1e-6 and bce_loss(0.0, 0)[0] < 1e-6
    eps = 1e-6
    numeric = (bce_loss(0.3 + eps, 0)[0] - bce_loss(0.3 - eps, 0)[0]) / (2 * eps)
    assert bce_loss(0.3, 0)[1] == pytest.approx(numeric, rel=1e-6)


def test_bce_batch_mean():
    loss, g = bce_batch(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    assert loss == pytest.approx(np.log(2))
    assert np.allclose(g, [-1.0, 1.0])


def test_sgd_step():
    w, _ = optimizer_step({"a": np.array([1.0])}, {"a": np.array([1.0])}, SGD(0.1))
    assert w["a"][0] == pytest.approx(0.9)
    w, _ = optimizer_step({"a": np.array([1.0])}, {"a": np.array([0.0])}, SGD(0.1))
    assert w["a"][0] == 1.0


@given(st.floats(-100, 100).filter(lambda g: abs(g) > 1e-3))
def test_adam_first_step_is_lr(g):
    w, state = optimizer_step({"a": np.array([2.0])}, {"a": np.array([g])}, Adam(0.01))
    assert w["a"][0] - 2.0 == pytest.approx(-0.01 * np.sign(g), rel=1e-4)
    assert state.step == 1


def test_adam_zero_grad():
    w, _ = optimizer_step({"a": np.array([2.0])}, {"a": np.array([0.0])}, Adam(0.01))
    assert abs(w["a"][0] - 2.0) < 0.01 * 1e-6


def test_optimizer_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        optimizer_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, SGD(0.1))


@given(st.integers(0, 2**31), st.integers(1, 3), st.integers(1, 3), st.integers(1, 5), st.integers(1, 3))
def test_conv1d_matches_naive(seed, cin, cout, k, stride):
    rng = np.random.default_rng(seed)
    length = int(rng.integers(k, k + 12))
    m = build_model([Conv1D(cin, cout, k, stride)], (cin, length), seed)
    x = rng.standard_normal((2, cin, length))
    y, _ = forward(m, x)
    assert y.shape[2] == (length - k) // stride + 1
    for n in range(2):
        ref = naive_conv1d(x[n], m.weights["0.W"], m.weights["0.b"], stride)
        assert np.allclose(y[n], ref, atol=1e-12)


@given(st.integers(0, 2**31), st.integers(1, 2), st.integers(1, 3), st.integers(1, 4), st.integers(1, 2))
def test_conv2d_matches_naive(seed, cin, cout, k, stride):
    rng = np.random.default_rng(seed)
    h, w = (int(v) for v in rng.integers(k, k + 8, 2))
    m = build_model([Conv2D(cin, cout, k, stride)], (cin, h, w), seed)
    x = rng.standard_normal((2, cin, h, w))
    y, _ = forward(m, x)
    assert y.shape[2:] == ((h - k) // stride + 1, (w - k) // stride + 1)
    for n in range(2):
        assert np.allclose(y[n], naive_conv2d(x[n], m.weights["0.W"], m.weights["0.b"], stride), atol=1e-12)


@given(st.integers(0, 2**31))
def test_maxpool_routes_to_argmax(seed):
    rng = np.random.default_rng(seed)
    m = build_model([MaxPool2D(2)], (2, 6, 7), 0)
    x = rng.standard_normal((3, 2, 6, 7))
    y, cache = forward(m, x)
    dy = rng.standard_normal(y.shape)
    dx = m.layers[0].backward({}, cache.layer_caches[0], dy)[0]
    assert dx.sum() == pytest.approx(dy.sum())
    # only window maxima receive gradient; the cropped last column gets none
    assert not dx[..., 6].any()
    for r in range(3):
        for c in range(3):
            block = x[0, 1, 2 * r:2 * r + 2, 2 * c:2 * c + 2]
            got = dx[0, 1, 2 * r:2 * r + 2, 2 * c:2 * c + 2]
            assert np.count_nonzero(got) <= 1
            assert got.flat[np.argmax(block)] == dy[0, 1, r, c]


def test_xor_learns():
    x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0.0, 1.0, 1.0, 0.0])
    m = build_model([Dense(2, 8), ReLU(), Dense(8, 1), Sigmoid()], (2,), seed=3)
    opt, state = Adam(0.05), None
    loss = 1.0
    for _ in range(2000):
        out, cache = forward(m, x)
        loss, g = bce_batch(out.reshape(-1), y)
        if loss < 0.05:
            break
        new, state = optimizer_step(m.weights, backward(m, cache, g.reshape(out.shape)), opt, state)
        m.set_weights(new)
    assert loss < 0.05


def _train_steps(seed, steps=20):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 2, 6))
    y = (x[:, 0].sum(axis=1) > 0).astype(float)
    m = build_model([LSTM(2, 4), Dense(4, 1), Sigmoid()], (2, 6), seed)
    state = None
    for _ in range(steps):
        out, cache = forward(m, x)
        _, g = bce_batch(out.reshape(-1), y)
        new, state = optimizer_step(m.weights, backward(m, cache, g.reshape(out.shape)), Adam(0.01), state)
        m.set_weights(new)
    return m


def test_training_is_bit_deterministic():
    a, b = _train_steps(5), _train_steps(5)
    assert all(a.weights[k].tobytes() == b.weights[k].tobytes() for k in a.weights)
    c = _train_steps(6)
    assert any(a.weights[k].tobytes() != c.weights[k].tobytes() for k in a.weights)


def test_model_file_round_trip(tmp_path):
    m = _train_steps(1, steps=3)
    m.meta["kind"] = "lstm"
    path = tmp_path / "m.json"
    save_model(m, path, training={"epochs": 3})
    back = load_model(path)
    assert [l.to_spec() for l in back.layers] == [l.to_spec() for l in m.layers]
    assert all(back.weights[k].tobytes() == m.weights[k].tobytes() for k in m.weights)
    assert back.meta == m.meta and back.rng_seed == 1
    x = np.random.default_rng(2).standard_normal((4, 2, 6))
    assert np.array_equal(predict_proba(back, x), predict_proba(m, x))


def test_stale_cache():
    m = build_model([Dense(2, 1)], (2,), 0)
    out, cache = forward(m, np.ones((1, 2)))
    m.set_weights(m.copy_weights())
    with pytest.raises(StaleCache):
        backward(m, cache, np.ones_like(out))


def test_shape_mismatch_reports_layer():
    with pytest.raises(ShapeMismatch) as err:
        build_model([Dense(4, 3), Dense(2, 1)], (4,), 0)
    assert err.value.layer == 1
    m = build_model([Dense(4, 3)], (4,), 0)
    with pytest.raises(ShapeMismatch):
        forward(m, np.ones((1, 5)))


def test_dropout_modes():
    m = build_model([Dropout(0.5)], (1000,), 0)
    x = np.ones((1, 1000))
    assert np.array_equal(forward(m, x)[0], x)
    y = forward(m, x, training=True, rng=np.random.default_rng(0))[0]
    assert set(np.unique(y)) <= {0.0, 2.0} and 0.4 < (y == 0).mean() < 0.6


@pytest.mark.parametrize("bad", [lambda: Dense(0, 1), lambda: Conv1D(1, 1, 3, 0), lambda: Dropout(1.0),
                                 lambda: LSTM(1, 0), lambda: MaxPool2D(0)])
def test_layer_spec_invariants(bad):
    with pytest.raises(ValidationError):
        bad()

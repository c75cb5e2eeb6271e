import numpy as np
import pytest

from chartpat.dataset import DatasetSplit, LabeledSample
from chartpat.errors import BadDimensions, EmptyGrid, ShapeMismatch, ValidationError, WindowTooShort
from chartpat.models import (TrainConfig, build_cnn1d, build_cnn2d, build_lstm, grid_search, predict_samples,
                             prepare_inputs, train)
from chartpat.nn import grad_check, shape_trace


def lstm_params(ch, u):
    return 4 * (u * ch + u * u + u) + (u + 1)


def toy_split(n=40, seed=0, length=30):
    """Positives trend up, negatives trend down; trivially separable."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        label = k % 2 == 0
        base = np.linspace(0, 1, length) if label else np.linspace(1, 0, length)
        m = np.clip(base + rng.normal(0, 0.05, (5, length)), 0, 1).astype(np.float32)
        out.append(LabeledSample(m, label, ("T", 100 * k, length), ("bearish-flag", "h"), tuple("OHLCV")))
    return DatasetSplit(out[: n * 3 // 4], out[n * 3 // 4:], seed)


@pytest.mark.parametrize("ch,units,expected", [(1, 10, 491), (5, 10, 651), (1, 1, 14)])
def test_lstm_param_counts(ch, units, expected):
    m = build_lstm(ch, units)
    assert m.param_count() == expected == lstm_params(ch, units)


def test_lstm_rejects_zero_units():
    with pytest.raises(ValidationError):
        build_lstm(1, 0)


def test_cnn1d_shapes():
    m = build_cnn1d(5, 30)
    assert shape_trace(m.layers, m.input_shape)[5] == (352,)
    m = build_cnn1d(4, 15)
    assert shape_trace(m.layers, m.input_shape)[4] == (16, 7)
    with pytest.raises(WindowTooShort):
        build_cnn1d(4, 8)


def test_cnn2d_shape_trace():
    m = build_cnn2d(64, 64)
    trace = shape_trace(m.layers, m.input_shape)
    assert [t[1] for t in trace[:8]] == [64, 30, 30, 15, 13, 13, 6, 4]
    assert trace[9] == (512,)


@pytest.mark.parametrize("w,h", [(32, 32), (96, 32), (31, 64)])
def test_cnn2d_bad_dimensions(w, h):
    # a 32-pixel axis reaches 2 before the last 3x3 conv
    with pytest.raises(BadDimensions):
        build_cnn2d(w, h)


def test_cnn2d_candlestick_default_is_valid():
    m = build_cnn2d(96, 64, {"style": "candlestick"})
    trace = shape_trace(m.layers, m.input_shape)
    # width 96 -> 46 -> 23 -> 21 -> 10 -> 8
    assert trace[9] == (32 * 4 * 8,)


def test_train_config_invariants():
    for kw in ({"epochs": 0}, {"batch_size": 0}, {"lr": 0}, {"optimizer": "rmsprop"}, {"patience": -1}):
        with pytest.raises(ValidationError):
            TrainConfig(**kw)


@pytest.mark.parametrize("builder", [lambda: build_lstm(1, 3, seed=1), lambda: build_cnn1d(4, 30, seed=1),
                                     lambda: build_cnn1d(5, 15, {"conv_channels": (2, 2), "dense": 4}, seed=1)])
def test_built_models_pass_grad_check(builder):
    m = builder()
    x = np.random.default_rng(0).random((2, *m.input_shape))
    assert grad_check(m, x, np.array([1.0, 0.0]), max_per_tensor=40).max_rel_error < 1e-4


def test_cnn2d_passes_grad_check():
    m = build_cnn2d(64, 64, {"conv_channels": (2, 2, 2), "dense": 4}, seed=1)
    # dense input: all-zero patches with zero bias sit exactly on the ReLU kink.
    # A first-layer weight moves ~1800 pooled values at once, so eps 1e-5 flips
    # some pooling argmax; 1e-6 stays inside the smooth region.
    x = np.random.default_rng(0).random((2, *m.input_shape))
    rep = grad_check(m, x, np.array([1.0, 0.0]), eps=1e-6, max_per_tensor=25, check_input=False)
    assert rep.max_rel_error < 1e-4


def test_train_is_deterministic_and_learns():
    sp = toy_split()
    cfg = TrainConfig(epochs=8, batch_size=8, lr=0.02, seed=3)
    a = train(build_lstm(1, 4, seed=2), sp, cfg)
    b = train(build_lstm(1, 4, seed=2), sp, cfg)
    assert a.to_json() == b.to_json()
    assert all(a.model.weights[k].tobytes() == b.model.weights[k].tobytes() for k in a.model.weights)
    assert a.epochs_run == 8 == len(a.val_metrics)
    assert a.best.recall == 1.0 and a.best.fp_rate == 0.0
    json = a.to_json()
    assert "wall_clock_s" not in json and "wall_clock_s" in a.to_json(include_clock=True)


def test_train_restores_best_checkpoint():
    sp = toy_split()
    rep = train(build_lstm(1, 4, seed=2), sp, TrainConfig(epochs=6, batch_size=8, lr=0.02, seed=3))
    probs = predict_samples(rep.model, sp.validation)
    labels = np.array([s.label for s in sp.validation])
    recall = ((probs >= 0.5) & labels).sum() / labels.sum()
    assert recall == rep.best.recall


def test_early_stopping():
    sp = toy_split()
    rep = train(build_lstm(1, 4, seed=2), sp, TrainConfig(epochs=40, batch_size=8, lr=0.05, seed=3, patience=2))
    assert rep.epochs_run <= rep.best_epoch + 3 < 40


def test_inputs_per_model_kind():
    sp = toy_split(8)
    assert prepare_inputs(build_lstm(1, 2), sp.train).shape == (6, 1, 30)
    assert prepare_inputs(build_cnn1d(4, 30), sp.train).shape == (6, 4, 30)
    x = prepare_inputs(build_cnn2d(64, 64), sp.train)
    assert x.shape == (6, 1, 64, 64) and set(np.unique(x)) <= {0.0, 1.0}
    x = prepare_inputs(build_cnn2d(96, 64, {"style": "candlestick"}), sp.train)
    assert x.shape == (6, 1, 64, 96)
    with pytest.raises(ShapeMismatch):
        prepare_inputs(build_lstm(1, 2, window_len=20), sp.train)


def test_grid_single_run():
    sp = toy_split()
    res = grid_search(lambda units: build_lstm(1, units, seed=0), sp, {"lr": [0.01], "units": [10]},
                      TrainConfig(epochs=2, batch_size=8))
    assert len(res) == 1 and res[0].params == {"lr": 0.01, "units": 10}


def test_grid_four_runs_ranked_with_lr_tie_break():
    sp = toy_split()
    res = grid_search(lambda units: build_lstm(1, units, seed=0), sp, {"lr": [0.1, 0.01], "units": [5, 10]},
                      TrainConfig(epochs=6, batch_size=8, seed=1))
    assert len(res) == 4
    assert {(r.params["lr"], r.params["units"]) for r in res} == {(0.1, 5), (0.1, 10), (0.01, 5), (0.01, 10)}
    keys = [(not r.metrics.fp_rate <= 0.01, -r.metrics.recall, r.metrics.fp_rate, r.params["lr"]) for r in res]
    assert keys == sorted(keys)
    top = [r for r in res if (r.metrics.recall, r.metrics.fp_rate) == (res[0].metrics.recall, res[0].metrics.fp_rate)]
    if len({r.params["lr"] for r in top}) > 1:
        assert top[0].params["lr"] == 0.01


def test_grid_is_deterministic():
    sp = toy_split()
    grid = {"lr": [0.05, 0.01]}
    a = grid_search(lambda: build_lstm(1, 3, seed=0), sp, grid, TrainConfig(epochs=2, batch_size=8))
    b = grid_search(lambda: build_lstm(1, 3, seed=0), sp, grid, TrainConfig(epochs=2, batch_size=8))
    assert [r.report.to_json() for r in a] == [r.report.to_json() for r in b]


def test_empty_grid():
    with pytest.raises(EmptyGrid):
        grid_search(build_lstm, toy_split(), {})
    with pytest.raises(EmptyGrid):
        grid_search(build_lstm, toy_split(), {"lr": []})

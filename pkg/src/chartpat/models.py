"""The three classifier architectures, seeded mini-batch training and grid search."""

from __future__ import annotations

import dataclasses
import itertools
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BadDimensions, EmptyGrid, ShapeMismatch, ValidationError, WindowTooShort
from .evaluation import Metrics, metrics_from_predictions
from .nn import (LSTM, Conv1D, Conv2D, Dense, Dropout, Flatten, MaxPool2D, ModelState, ReLU, Sigmoid,
                 backward, bce_batch, build_model, forward, make_optimizer, optimizer_step, predict_proba)
from .nn.optim import OptState
from .raster import render_candlestick, render_line

DEFAULT_WINDOW = 30


def _default_channels(n: int) -> str:
    return {1: "C", 4: "OHLC", 5: "OHLCV"}.get(n, "OHLCV"[:n])


def build_lstm(input_channels: int = 1, units: int = 10, seed: int = 0, window_len: int = DEFAULT_WINDOW,
               channels: str | None = None) -> ModelState:
    if units < 1:
        raise ValidationError("units must be >= 1")
    channels = channels or _default_channels(input_channels)
    if len(channels) != input_channels:
        raise ValidationError(f"channels {channels!r} do not match input_channels={input_channels}")
    layers = [LSTM(input_channels, units), Dense(units, 1), Sigmoid()]
    return build_model(layers, (input_channels, window_len), seed,
                       {"kind": "lstm", "channels": channels, "units": units})


CNN1D_DEFAULTS = {"conv_channels": (8, 16), "kernel": 5, "dense": 32}


def build_cnn1d(input_channels: int = 4, window_len: int = DEFAULT_WINDOW, config: dict | None = None,
                seed: int = 0, channels: str | None = None) -> ModelState:
    cfg = {**CNN1D_DEFAULTS, **(config or {})}
    c1, c2 = cfg["conv_channels"]
    k = cfg["kernel"]
    feat = window_len - 2 * (k - 1)
    if feat < 1:
        raise WindowTooShort(f"window of {window_len} collapses to {feat} after two kernel-{k} convolutions")
    channels = channels or _default_channels(input_channels)
    layers = [Conv1D(input_channels, c1, k), ReLU(), Conv1D(c1, c2, k), ReLU(), Flatten(),
              Dense(c2 * feat, cfg["dense"]), ReLU(), Dense(cfg["dense"], 1), Sigmoid()]
    return build_model(layers, (input_channels, window_len), seed,
                       {"kind": "cnn1d", "channels": channels, "config": _jsonable(cfg)})


CNN2D_DEFAULTS = {"conv_channels": (16, 32, 32), "dense": 64, "dropout": 0.5, "style": "line", "channel": "H"}


def build_cnn2d(width: int = 64, height: int = 64, config: dict | None = None, seed: int = 0) -> ModelState:
    """Scaled-down AlexNet-style stack on a single binary plane."""
    cfg = {**CNN2D_DEFAULTS, **(config or {})}
    if width < 32 or height < 32:
        raise BadDimensions("vignettes must be at least 32x32")
    c1, c2, c3 = cfg["conv_channels"]
    conv = [Conv2D(1, c1, 5, 2), ReLU(), MaxPool2D(2), Conv2D(c1, c2, 3), ReLU(), MaxPool2D(2),
            Conv2D(c2, c3, 3), ReLU(), Flatten()]
    try:
        from .nn import shape_trace

        flat = shape_trace(conv, (1, height, width))[-1][0]
    except ShapeMismatch as exc:
        raise BadDimensions(f"{width}x{height} collapses in the conv stack: {exc}") from None
    head = [Dense(flat, cfg["dense"]), ReLU(), Dropout(cfg["dropout"]), Dense(cfg["dense"], 1), Sigmoid()]
    return build_model(conv + head, (1, height, width), seed,
                       {"kind": "cnn2d", "width": width, "height": height, "config": _jsonable(cfg),
                        "style": cfg["style"], "channel": cfg["channel"]})


def _jsonable(cfg: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}


BUILDERS = {"lstm": build_lstm, "cnn1d": build_cnn1d, "cnn2d": build_cnn2d}


def prepare_inputs(model: ModelState, samples: Sequence) -> np.ndarray:
    """Turn labeled samples into the model's input tensor (batch first)."""
    meta = model.meta
    kind = meta.get("kind")
    if kind in ("lstm", "cnn1d"):
        x = np.stack([s.matrix(meta["channels"]) for s in samples]).astype(np.float64)
    elif kind == "cnn2d":
        w, h = meta["width"], meta["height"]
        if meta.get("style", "line") == "candlestick":
            imgs = [render_candlestick(s.matrix("OHLC"), w, h).pixels for s in samples]
        else:
            imgs = [render_line(s.matrix(meta.get("channel", "H"))[0], width=w, height=h).pixels for s in samples]
        x = np.stack(imgs)[:, None].astype(np.float64)
    else:
        raise ValidationError(f"model has no input recipe (kind={kind!r})")
    if tuple(x.shape[1:]) != tuple(model.input_shape):
        raise ShapeMismatch(f"samples give inputs {x.shape[1:]}, model expects {model.input_shape}")
    return x


def predict_samples(model: ModelState, samples: Sequence) -> np.ndarray:
    if not samples:
        return np.zeros(0)
    return predict_proba(model, prepare_inputs(model, samples))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    seed: int = 0
    patience: int = 0  # 0 disables early stopping
    threshold: float = 0.5
    fp_cap: float = 0.01

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValidationError("lr must be > 0")
        if self.patience < 0:
            raise ValidationError("patience must be >= 0")
        make_optimizer(self.optimizer, self.lr)


@dataclass
class TrainReport:
    config: dict
    train_loss: list[float] = field(default_factory=list)
    val_metrics: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    wall_clock_s: float = 0.0
    model: ModelState | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    @property
    def best(self) -> Metrics:
        return Metrics.from_json(self.val_metrics[self.best_epoch])

    def to_json(self, name: str | None = None, include_clock: bool = False) -> dict:
        d = {
            "name": name or (self.model.meta.get("kind") if self.model else None),
            "config": self.config,
            "epochs_run": self.epochs_run,
            "train_loss": self.train_loss,
            "val_metrics": self.val_metrics,
            "best_epoch": self.best_epoch,
            "best_metrics": self.val_metrics[self.best_epoch] if self.val_metrics else None,
            "model_meta": self.model.meta if self.model else None,
        }
        if include_clock:
            d["wall_clock_s"] = self.wall_clock_s
        return d


def selection_key(m: Metrics, fp_cap: float) -> tuple:
    """Higher is better: within the FP cap first, then recall, then fewer FPs."""
    return (m.fp_rate <= fp_cap, m.recall, -m.fp_rate)


def train(model: ModelState, split, cfg: TrainConfig = TrainConfig(), log: Callable | None = None) -> TrainReport:
    """Seeded mini-batch training; keeps the best-validation checkpoint in ``model``."""
    x_tr = prepare_inputs(model, split.train)
    y_tr = np.array([s.label for s in split.train], dtype=np.float64)
    x_va = prepare_inputs(model, split.validation)
    y_va = np.array([s.label for s in split.validation], dtype=bool)
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    state = OptState()
    report = TrainReport(config=dataclasses.asdict(cfg), model=model)
    best_key = None
    best_weights = model.copy_weights()
    stale = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(x_tr))
        losses = []
        for k in range(0, len(perm), cfg.batch_size):
            idx = perm[k:k + cfg.batch_size]
            out, cache = forward(model, x_tr[idx], training=True, rng=rng)
            loss, g = bce_batch(out.reshape(-1), y_tr[idx])
            grads = backward(model, cache, g.reshape(out.shape))
            new_weights, state = optimizer_step(model.weights, grads, opt, state)
            model.set_weights(new_weights)
            losses.append(loss * len(idx))
        report.train_loss.append(float(np.sum(losses) / len(perm)))
        probs = predict_proba(model, x_va)
        m = metrics_from_predictions(y_va, probs >= cfg.threshold)
        report.val_metrics.append(m.to_json())
        key = selection_key(m, cfg.fp_cap)
        if best_key is None or key > best_key:
            best_key, report.best_epoch = key, epoch
            best_weights = model.copy_weights()
            stale = 0
        else:
            stale += 1
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs} loss {report.train_loss[-1]:.4f} "
                f"recall {m.recall:.3f} fp_rate {m.fp_rate:.3f}")
        if cfg.patience and stale >= cfg.patience:
            break
    model.set_weights(best_weights)
    report.wall_clock_s = time.perf_counter() - t0
    return report


@dataclass
class GridResult:
    params: dict
    report: TrainReport

    @property
    def metrics(self) -> Metrics:
        return self.report.best


TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}


def _grid_points(grid: dict) -> list[dict]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise EmptyGrid("grid must name at least one value per hyper-parameter")
    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _run_point(args):
    builder, split, point, base_cfg = args
    cfg_kw = {k: v for k, v in point.items() if k in TRAIN_KEYS}
    build_kw = {k: v for k, v in point.items() if k not in TRAIN_KEYS}
    cfg = dataclasses.replace(base_cfg, **cfg_kw)
    model = builder(**build_kw)
    return GridResult(point, train(model, split, cfg))


def grid_search(builder: Callable[..., ModelState], split, grid: dict, base_cfg: TrainConfig = TrainConfig(),
                fp_cap: float | None = None, jobs: int = 1) -> list[GridResult]:
    """Evaluate the Cartesian product of ``grid`` and rank the runs.

    Keys naming TrainConfig fields go to the trainer, the rest to ``builder``.
    Ranking: runs within the FP-rate cap first, then recall, then lower FP
    rate, then lower learning rate, then grid order.
    """
    points = _grid_points(grid)
    cap = base_cfg.fp_cap if fp_cap is None else fp_cap
    tasks = [(builder, split, p, base_cfg) for p in points]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_point, tasks))
    else:
        results = [_run_point(t) for t in tasks]

    def rank(item):
        pos, r = item
        m = r.metrics
        lr = r.params.get("lr", base_cfg.lr)
        return (not m.fp_rate <= cap, -m.recall, m.fp_rate, lr, pos)

    return [r for _, r in sorted(enumerate(results), key=rank)]

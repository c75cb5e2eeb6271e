"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelState, backward, forward
from .optim import bce_batch

# gradients below this magnitude are compared absolutely rather than relatively
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    per_tensor: dict[str, float] = field(default_factory=dict)
    checked: int = 0

    @property
    def per_layer(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for name, err in self.per_tensor.items():
            i = int(name.split(".")[0])
            out[i] = max(out.get(i, 0.0), err)
        return out

    @property
    def max_rel_error(self) -> float:
        return max(self.per_tensor.values(), default=0.0)

    @property
    def input_max_rel_error(self) -> float:
        return self.per_tensor.get("input", 0.0)


def rel_error(a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)


def _loss_fn(model, x, y, projection):
    out, cache = forward(model, x, training=False)
    if projection is None:
        loss, g = bce_batch(out.reshape(-1), y)
        return loss, cache, g.reshape(out.shape)
    return float(np.sum(out * projection)), cache, projection


def grad_check(model: ModelState, x: np.ndarray, y: np.ndarray | None = None, eps: float = 1e-5,
               max_per_tensor: int | None = None, seed: int = 0, check_input: bool = True) -> GradCheckReport:
    """Compare backprop gradients with central differences, per weight tensor.

    With labels ``y`` the loss is mean BCE of the model output; without them it
    is a fixed random projection of the output, which works for any layer.
    Dropout is evaluated in inference mode. ``max_per_tensor`` samples that many
    entries of each tensor instead of all of them.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    projection = None
    if y is None:
        out, _ = forward(model, x)
        projection = rng.standard_normal(out.shape)
    loss, cache, g = _loss_fn(model, x, y, projection)
    analytic = backward(model, cache, g)
    report = GradCheckReport()
    base = model.copy_weights()
    for name in sorted(base):
        w = base[name]
        flat_idx = np.arange(w.size)
        if max_per_tensor is not None and w.size > max_per_tensor:
            flat_idx = np.sort(rng.choice(w.size, max_per_tensor, replace=False))
        numeric = np.empty(len(flat_idx))
        for k, j in enumerate(flat_idx):
            vals = []
            for sign in (1.0, -1.0):
                trial = dict(base)
                arr = w.copy()
                arr.flat[j] += sign * eps
                trial[name] = arr
                model.set_weights(trial)
                vals.append(_loss_fn(model, x, y, projection)[0])
            numeric[k] = (vals[0] - vals[1]) / (2 * eps)
        model.set_weights(base)
        err = rel_error(analytic[name].reshape(-1)[flat_idx], numeric)
        report.per_tensor[name] = float(err.max()) if err.size else 0.0
        report.checked += len(flat_idx)
    if check_input:
        report.per_tensor["input"] = _check_input(model, x, y, projection, eps, max_per_tensor, rng)
    return report


def _check_input(model, x, y, projection, eps, max_per_tensor, rng) -> float:
    out, cache = forward(model, x)
    if projection is None:
        _, g = bce_batch(out.reshape(-1), y)
        g = g.reshape(out.shape)
    else:
        g = projection
    dx = x.copy()
    grad_out = g
    # propagate to the input through the cached pass
    for i in range(len(model.layers) - 1, -1, -1):
        grad_out, _ = model.layers[i].backward(model.layer_params(i), cache.layer_caches[i], grad_out)
    idx = np.arange(x.size)
    if max_per_tensor is not None and x.size > max_per_tensor:
        idx = rng.choice(x.size, max_per_tensor, replace=False)
    numeric = np.empty(len(idx))
    for k, j in enumerate(idx):
        vals = []
        for sign in (1.0, -1.0):
            xt = dx.copy()
            xt.flat[j] += sign * eps
            vals.append(_loss_fn(model, xt, y, projection)[0])
        numeric[k] = (vals[0] - vals[1]) / (2 * eps)
    return float(rel_error(grad_out.reshape(-1)[idx], numeric).max())

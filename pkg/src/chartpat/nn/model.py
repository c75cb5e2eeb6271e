"""Sequential model state, forward/backward over the layer stack, and the model file format."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ShapeMismatch, StaleCache, ValidationError
from .layers import Layer, layer_from_spec

FORMAT = "chartpat-model"
FORMAT_VERSION = 1


@dataclass(eq=False)
class ModelState:
    layers: list[Layer]
    weights: dict[str, np.ndarray]
    rng_seed: int
    input_shape: tuple[int, ...]
    meta: dict = field(default_factory=dict)
    version: int = 0

    def layer_params(self, i: int) -> dict[str, np.ndarray]:
        prefix = f"{i}."
        return {k[len(prefix):]: v for k, v in self.weights.items() if k.startswith(prefix)}

    def set_weights(self, weights: dict[str, np.ndarray]) -> None:
        if set(weights) != set(self.weights):
            raise ShapeMismatch("weight names differ from the model's")
        for k, v in weights.items():
            if v.shape != self.weights[k].shape:
                raise ShapeMismatch(f"{k}: shape {v.shape} != {self.weights[k].shape}")
        self.weights = dict(weights)
        self.version += 1

    def param_count(self) -> int:
        return int(sum(v.size for v in self.weights.values()))

    def copy_weights(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.weights.items()}


@dataclass(eq=False)
class ForwardCache:
    layer_caches: list
    version: int
    model_id: int
    training: bool


def shape_trace(layers: Sequence[Layer], input_shape: tuple) -> list[tuple]:
    shapes = [tuple(input_shape)]
    for i, layer in enumerate(layers):
        try:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        except ShapeMismatch as exc:
            raise ShapeMismatch(str(exc), layer=i) from None
    return shapes


def build_model(layers: Sequence[Layer], input_shape: tuple, seed: int, meta: dict | None = None) -> ModelState:
    shape_trace(layers, input_shape)
    rng = np.random.default_rng(seed)
    weights = {}
    for i, layer in enumerate(layers):
        for name, arr in layer.init_params(rng).items():
            weights[f"{i}.{name}"] = np.asarray(arr, dtype=np.float64)
    return ModelState(list(layers), weights, seed, tuple(input_shape), dict(meta or {}))


def forward(model: ModelState, x: np.ndarray, training: bool = False, rng=None):
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape[1:]) != tuple(model.input_shape):
        raise ShapeMismatch(f"input shape {tuple(x.shape[1:])} != {tuple(model.input_shape)}", layer=0)
    caches = []
    for i, layer in enumerate(model.layers):
        x, cache = layer.forward(model.layer_params(i), x, training, rng)
        caches.append(cache)
    return x, ForwardCache(caches, model.version, id(model), training)


def backward(model: ModelState, cache: ForwardCache, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every weight given dLoss/dOutput for the cached forward pass."""
    if cache.model_id != id(model) or cache.version != model.version:
        raise StaleCache("weights changed since the forward pass")
    grads: dict[str, np.ndarray] = {}
    dy = np.asarray(loss_grad, dtype=np.float64)
    for i in range(len(model.layers) - 1, -1, -1):
        dy, g = model.layers[i].backward(model.layer_params(i), cache.layer_caches[i], dy)
        for name, arr in g.items():
            grads[f"{i}.{name}"] = arr
    return grads


def predict_proba(model: ModelState, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = [forward(model, x[k:k + batch_size])[0].reshape(-1) for k in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def _encode(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "dtype": "<f8",
            "data_b64": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")}


def _decode(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data_b64"]), dtype=d.get("dtype", "<f8")).reshape(d["shape"]).copy()


def model_to_json(model: ModelState, training: dict | None = None) -> dict:
    return {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "layers": [layer.to_spec() for layer in model.layers],
        "input_shape": list(model.input_shape),
        "rng_seed": model.rng_seed,
        "meta": model.meta,
        "training": training or {},
        "weights": {k: _encode(v) for k, v in sorted(model.weights.items())},
    }


def model_from_json(d: dict) -> ModelState:
    if d.get("format") != FORMAT:
        raise ValidationError("not a model file")
    if d.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported model format version {d.get('format_version')}")
    layers = [layer_from_spec(s) for s in d["layers"]]
    model = ModelState(layers, {k: _decode(v) for k, v in d["weights"].items()}, int(d["rng_seed"]),
                       tuple(d["input_shape"]), dict(d.get("meta", {})))
    expected = {f"{i}.{n}": tuple(s) for i, l in enumerate(layers) for n, s in l.param_shapes().items()}
    actual = {k: v.shape for k, v in model.weights.items()}
    if expected != actual:
        raise ShapeMismatch("weight shapes inconsistent with layer specs")
    shape_trace(layers, model.input_shape)
    return model


def save_model(model: ModelState, path: str | Path, training: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_json(model, training), sort_keys=True) + "\n")


def load_model(path: str | Path) -> ModelState:
    return model_from_json(json.loads(Path(path).read_text()))

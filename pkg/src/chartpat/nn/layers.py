"""Layer set with explicit forward/backward passes.

Shapes exclude the batch axis in ``output_shape`` and include it everywhere
else: dense (N, F), 1-D conv (N, C, L), 2-D conv (N, C, H, W), LSTM input
(N, C, T) in the same channel-major layout as dataset windows.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch, ValidationError


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Layer:
    """Base class. Stateless: parameters live in the model's weight map."""

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return {}

    def output_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def forward(self, params, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, params, cache, dy):
        raise NotImplementedError

    def to_spec(self) -> dict:
        return {"type": type(self).__name__, **asdict(self)}


@dataclass(frozen=True)
class Dense(Layer):
    n_in: int
    n_out: int

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise ValidationError("Dense dimensions must be positive")

    def param_shapes(self):
        return {"W": (self.n_in, self.n_out), "b": (self.n_out,)}

    def init_params(self, rng):
        return {"W": glorot(rng, (self.n_in, self.n_out), self.n_in, self.n_out), "b": np.zeros(self.n_out)}

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.n_in,):
            raise ShapeMismatch(f"Dense expects ({self.n_in},), got {tuple(in_shape)}")
        return (self.n_out,)

    def forward(self, params, x, training=False, rng=None):
        return x @ params["W"] + params["b"], x

    def backward(self, params, cache, dy):
        x = cache
        return dy @ params["W"].T, {"W": x.T @ dy, "b": dy.sum(axis=0)}


@dataclass(frozen=True)
class Conv1D(Layer):
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1

    def __post_init__(self):
        if min(self.in_ch, self.out_ch, self.kernel) < 1 or self.stride < 1:
            raise ValidationError("Conv1D dimensions must be positive, stride >= 1")

    def param_shapes(self):
        return {"W": (self.out_ch, self.in_ch, self.kernel), "b": (self.out_ch,)}

    def init_params(self, rng):
        k = self.kernel
        return {"W": glorot(rng, (self.out_ch, self.in_ch, k), self.in_ch * k, self.out_ch * k),
                "b": np.zeros(self.out_ch)}

    def output_shape(self, in_shape):
        c, length = in_shape
        if c != self.in_ch:
            raise ShapeMismatch(f"Conv1D expects {self.in_ch} channels, got {c}")
        out = (length - self.kernel) // self.stride + 1
        if out < 1:
            raise ShapeMismatch(f"Conv1D kernel {self.kernel} does not fit length {length}")
        return (self.out_ch, out)

    def forward(self, params, x, training=False, rng=None):
        cols = sliding_window_view(x, self.kernel, axis=2)[:, :, ::self.stride, :]  # N,C,Lo,k
        y = np.tensordot(cols, params["W"], axes=([1, 3], [1, 2])).transpose(0, 2, 1) + params["b"][:, None]
        return y, (x.shape, cols)

    def backward(self, params, cache, dy):
        x_shape, cols = cache
        W = params["W"]
        dW = np.tensordot(dy, cols, axes=([0, 2], [0, 2]))
        db = dy.sum(axis=(0, 2))
        dcols = np.tensordot(dy, W, axes=([1], [0]))  # N,Lo,C,k
        dx = np.zeros(x_shape)
        lo = dy.shape[2]
        s = self.stride
        for j in range(self.kernel):
            dx[:, :, j:j + s * (lo - 1) + 1:s] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dx, {"W": dW, "b": db}


@dataclass(frozen=True)
class Conv2D(Layer):
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1

    def __post_init__(self):
        if min(self.in_ch, self.out_ch, self.kernel) < 1 or self.stride < 1:
            raise ValidationError("Conv2D dimensions must be positive, stride >= 1")

    def param_shapes(self):
        k = self.kernel
        return {"W": (self.out_ch, self.in_ch, k, k), "b": (self.out_ch,)}

    def init_params(self, rng):
        k = self.kernel
        return {"W": glorot(rng, (self.out_ch, self.in_ch, k, k), self.in_ch * k * k, self.out_ch * k * k),
                "b": np.zeros(self.out_ch)}

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_ch:
            raise ShapeMismatch(f"Conv2D expects {self.in_ch} channels, got {c}")
        ho = (h - self.kernel) // self.stride + 1
        wo = (w - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"Conv2D kernel {self.kernel} does not fit {h}x{w}")
        return (self.out_ch, ho, wo)

    def forward(self, params, x, training=False, rng=None):
        k, s = self.kernel, self.stride
        cols = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]  # N,C,Ho,Wo,k,k
        y = np.tensordot(cols, params["W"], axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        return y + params["b"][:, None, None], (x.shape, cols)

    def backward(self, params, cache, dy):
        x_shape, cols = cache
        k, s = self.kernel, self.stride
        dW = np.tensordot(dy, cols, axes=([0, 2, 3], [0, 2, 3]))
        db = dy.sum(axis=(0, 2, 3))
        dcols = np.tensordot(dy, params["W"], axes=([1], [0]))  # N,Ho,Wo,C,k,k
        dx = np.zeros(x_shape)
        ho, wo = dy.shape[2], dy.shape[3]
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx, {"W": dW, "b": db}


@dataclass(frozen=True)
class MaxPool2D(Layer):
    k: int = 2

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("pool size must be positive")

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if h < self.k or w < self.k:
            raise ShapeMismatch(f"MaxPool2D({self.k}) does not fit {h}x{w}")
        return (c, h // self.k, w // self.k)

    def forward(self, params, x, training=False, rng=None):
        n, c, h, w = x.shape
        k = self.k
        ho, wo = h // k, w // k
        blocks = x[:, :, :ho * k, :wo * k].reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, ho, wo, k * k)
        arg = blocks.argmax(axis=-1)  # first maximum on ties
        y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return y, (x.shape, arg)

    def backward(self, params, cache, dy):
        x_shape, arg = cache
        n, c, h, w = x_shape
        k = self.k
        ho, wo = dy.shape[2], dy.shape[3]
        routed = np.zeros((n, c, ho, wo, k * k))
        np.put_along_axis(routed, arg[..., None], dy[..., None], axis=-1)
        routed = routed.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
        dx = np.zeros(x_shape)
        dx[:, :, :ho * k, :wo * k] = routed
        return dx, {}


@dataclass(frozen=True)
class ReLU(Layer):
    def forward(self, params, x, training=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, cache, dy):
        return dy * cache, {}


@dataclass(frozen=True)
class Sigmoid(Layer):
    def forward(self, params, x, training=False, rng=None):
        y = sigmoid(x)
        return y, y

    def backward(self, params, cache, dy):
        return dy * cache * (1.0 - cache), {}


@dataclass(frozen=True)
class Tanh(Layer):
    def forward(self, params, x, training=False, rng=None):
        y = np.tanh(x)
        return y, y

    def backward(self, params, cache, dy):
        return dy * (1.0 - cache ** 2), {}


@dataclass(frozen=True)
class Flatten(Layer):
    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, params, x, training=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, dy):
        return dy.reshape(cache), {}


@dataclass(frozen=True)
class Dropout(Layer):
    rate: float = 0.5

    def __post_init__(self):
        if not 0 <= self.rate < 1:
            raise ValidationError("dropout rate must be in [0, 1)")

    def forward(self, params, x, training=False, rng=None):
        if not training or self.rate == 0:
            return x, None
        if rng is None:
            raise ValidationError("training-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, params, cache, dy):
        return (dy if cache is None else dy * cache), {}


def lstm_step(x: np.ndarray, h: np.ndarray, c: np.ndarray, weights: dict):
    """One LSTM time step; returns (h', c', gates) with gates = (i, f, g, o).

    Gate pre-activations are stacked as [input, forget, cell, output] blocks
    of ``units`` rows in W (4u x input_dim), U (4u x u) and b (4u).
    """
    W, U, b = weights["W"], weights["U"], weights["b"]
    u = U.shape[1]
    if x.shape[-1] != W.shape[1] or h.shape[-1] != u or c.shape[-1] != u:
        raise ShapeMismatch("lstm_step dimensions disagree with weights")
    z = x @ W.T + h @ U.T + b
    i = sigmoid(z[..., :u])
    f = sigmoid(z[..., u:2 * u])
    g = np.tanh(z[..., 2 * u:3 * u])
    o = sigmoid(z[..., 3 * u:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new, (i, f, g, o)


@dataclass(frozen=True)
class LSTM(Layer):
    """Single recurrent layer returning the last hidden state (N, units)."""

    input_dim: int
    units: int

    def __post_init__(self):
        if self.input_dim < 1 or self.units < 1:
            raise ValidationError("LSTM dimensions must be positive")

    def param_shapes(self):
        u = self.units
        return {"W": (4 * u, self.input_dim), "U": (4 * u, u), "b": (4 * u,)}

    def init_params(self, rng):
        u = self.units
        limit = 1.0 / math.sqrt(u)
        b = np.zeros(4 * u)
        b[u:2 * u] = 1.0  # forget gate bias
        return {"W": rng.uniform(-limit, limit, (4 * u, self.input_dim)),
                "U": rng.uniform(-limit, limit, (4 * u, u)), "b": b}

    def output_shape(self, in_shape):
        c = in_shape[0]
        if c != self.input_dim:
            raise ShapeMismatch(f"LSTM expects {self.input_dim} input channels, got {c}")
        return (self.units,)

    def forward(self, params, x, training=False, rng=None):
        n, _, t_len = x.shape
        h = np.zeros((n, self.units))
        c = np.zeros((n, self.units))
        steps = []
        for t in range(t_len):
            xt = x[:, :, t]
            h_new, c_new, gates = lstm_step(xt, h, c, params)
            steps.append((xt, h, c, gates, np.tanh(c_new)))
            h, c = h_new, c_new
        return h, (x.shape, steps)

    def backward(self, params, cache, dy):
        x_shape, steps = cache
        W, U = params["W"], params["U"]
        dW = np.zeros_like(W)
        dU = np.zeros_like(U)
        db = np.zeros_like(params["b"])
        dx = np.zeros(x_shape)
        dh = dy
        dc = np.zeros_like(dy)
        for t in range(len(steps) - 1, -1, -1):
            xt, h_prev, c_prev, (i, f, g, o), tc = steps[t]
            do = dh * tc
            dct = dc + dh * o * (1.0 - tc ** 2)
            dz = np.concatenate([
                dct * g * i * (1.0 - i),
                dct * c_prev * f * (1.0 - f),
                dct * i * (1.0 - g ** 2),
                do * o * (1.0 - o),
            ], axis=1)
            dW += dz.T @ xt
            dU += dz.T @ h_prev
            db += dz.sum(axis=0)
            dx[:, :, t] = dz @ W
            dh = dz @ U
            dc = dct * f
        return dx, {"W": dW, "U": dU, "b": db}


LAYER_TYPES = {cls.__name__: cls for cls in
               (Dense, Conv1D, Conv2D, MaxPool2D, ReLU, Sigmoid, Tanh, Flatten, Dropout, LSTM)}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    cls = LAYER_TYPES.get(spec.pop("type", None))
    if cls is None:
        raise ValidationError(f"unknown layer spec {spec}")
    return cls(**spec)

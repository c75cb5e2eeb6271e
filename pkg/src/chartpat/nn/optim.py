"""Binary cross-entropy and first-order optimizers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch, ValidationError

CLAMP = 1e-7


def bce_loss(pred, label):
    """Elementwise BCE on clamped probabilities; returns (loss, dloss/dpred)."""
    p = np.clip(np.asarray(pred, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    y = np.asarray(label, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    grad = (p - y) / (p * (1.0 - p))
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def bce_batch(pred: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean BCE over a batch and its gradient w.r.t. each prediction."""
    loss, grad = bce_loss(pred, labels)
    n = max(len(np.atleast_1d(loss)), 1)
    return float(np.mean(loss)), grad / n


@dataclass(frozen=True)
class SGD:
    lr: float = 0.01

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError("lr must be > 0")


@dataclass(frozen=True)
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError("lr must be > 0")


@dataclass
class OptState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def make_optimizer(name: str, lr: float):
    name = name.lower()
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValidationError(f"unknown optimizer {name!r}")


def optimizer_step(weights: dict, grads: dict, opt, state: OptState | None = None):
    """Return (new_weights, new_state); inputs are left untouched."""
    state = state or OptState()
    for k, g in grads.items():
        if k not in weights or weights[k].shape != g.shape:
            raise ShapeMismatch(f"gradient {k} does not match weights")
    new = dict(weights)
    if isinstance(opt, SGD):
        for k, g in grads.items():
            new[k] = weights[k] - opt.lr * g
        return new, OptState(state.step + 1, state.m, state.v)
    if isinstance(opt, Adam):
        t = state.step + 1
        m, v = dict(state.m), dict(state.v)
        for k, g in grads.items():
            m[k] = opt.beta1 * m.get(k, 0.0) + (1 - opt.beta1) * g
            v[k] = opt.beta2 * v.get(k, 0.0) + (1 - opt.beta2) * g * g
            m_hat = m[k] / (1 - opt.beta1 ** t)
            v_hat = v[k] / (1 - opt.beta2 ** t)
            new[k] = weights[k] - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
        return new, OptState(t, m, v)
    raise ValidationError(f"unsupported optimizer {opt!r}")

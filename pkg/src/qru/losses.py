"""Loss heads on raw <Z> outputs and their derivatives w.r.t. outputs and scale s."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .statevector import as_real

DEFAULT_CLAMP = 1e-12

_TRANSFORMS = {"mse": "raw", "bce": "scale_then_sigmoid", "ce": "scale_then_softmax"}


@dataclass(frozen=True)
class LossSpec:
    kind: str  # "mse", "bce" or "ce"
    clamp_epsilon: float = DEFAULT_CLAMP

    def __post_init__(self):
        if self.kind not in _TRANSFORMS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if not 0.0 < self.clamp_epsilon <= 1e-3:
            raise ConfigError("clamp_epsilon must lie in (0, 1e-3]")

    @property
    def output_transform(self) -> str:
        return _TRANSFORMS[self.kind]


def sigmoid(z):
    z = as_real(z)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def softmax(z):
    z = as_real(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(spec: LossSpec, raw, scale: float = 1.0) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    if spec.kind == "bce":
        return sigmoid(scale * raw.reshape(raw.shape[0], -1)[:, 0])
    if spec.kind == "ce":
        return softmax(scale * raw)
    return raw


def loss_and_grad_outputs(spec: LossSpec, raw, scale, labels):
    """Mean batch loss and its gradient w.r.t. ``raw`` and the scalar ``scale``."""
    raw = as_real(raw)
    labels = np.asarray(labels, dtype=float)
    eps = spec.clamp_epsilon
    if spec.kind == "mse":
        if labels.shape != raw.shape:
            raise InputError(f"labels shape {labels.shape} does not match outputs {raw.shape}")
        diff = raw - labels
        return np.mean(diff ** 2), 2.0 * diff / diff.size, 0.0

    n = raw.shape[0]
    if spec.kind == "bce":
        if raw.ndim != 2 or raw.shape[1] != 1:
            raise InputError("binary cross-entropy needs a single output per sample")
        y = labels.reshape(-1)
        if y.shape != (n,):
            raise InputError(f"expected {n} labels, got shape {labels.shape}")
        z = scale * raw[:, 0]
        p = sigmoid(z)
        pc = np.clip(p, eps, 1.0 - eps)
        loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
        inside = (p > eps) & (p < 1.0 - eps)
        dp = np.where(inside, -(y / pc - (1.0 - y) / (1.0 - pc)) / n, 0.0)
        dz = dp * p * (1.0 - p)
        return loss, (scale * dz)[:, None], np.sum(dz * raw[:, 0])

    # cross-entropy over softmax(scale * raw)
    if raw.ndim != 2 or raw.shape[1] < 2:
        raise InputError("cross-entropy needs at least two outputs per sample")
    if labels.shape != raw.shape:
        raise InputError(f"one-hot labels shape {labels.shape} does not match outputs {raw.shape}")
    z = scale * raw
    p = softmax(z)
    pc = np.clip(p, eps, 1.0 - eps)
    loss = -np.sum(labels * np.log(pc)) / n
    inside = (p > eps) & (p < 1.0 - eps)
    dp = np.where(inside, -labels / pc, 0.0) / n
    dz = p * (dp - np.sum(dp * p, axis=1, keepdims=True))
    return loss, scale * dz, np.sum(dz * raw)


def compute_loss(spec: LossSpec, raw_outputs, scale_s, labels):
    """Mean loss; a numpy scalar whose precision follows ``raw_outputs``."""
    return loss_and_grad_outputs(spec, raw_outputs, scale_s, labels)[0]

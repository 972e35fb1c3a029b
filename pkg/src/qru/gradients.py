"""Batch losses and gradients w.r.t. the shared parameter vector.

``gradient`` uses the compiled reverse-mode engine. ``finite_difference_gradient``
is the oracle: it re-evaluates the loss through the gate-by-gate reference
simulator, so the two share nothing but the loss head. The oracle runs in
extended precision (longdouble) by default. In float64 the central-difference
rounding noise is about eps*|L|/h ~ 1e-11, which swamps parameters whose true
gradient is exactly zero (e.g. a trailing Rz that only adds a phase).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell import QRUArchitecture, ParameterLayout, _as_values
from .engine import compiled
from .errors import InputError
from .losses import LossSpec, compute_loss
from .recurrent import run_sequence


@dataclass(frozen=True)
class Batch:
    """Sequences of equal length plus targets.

    ``readout="final"`` scores only the last step (targets ``(B, n_out)`` or
    ``(B,)`` class labels for BCE); ``readout="all"`` scores every step
    (targets ``(B, T, n_out)``).
    """

    inputs: np.ndarray
    targets: np.ndarray
    readout: str = "final"

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=float))
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=float))
        if self.inputs.ndim != 3 or self.inputs.shape[0] == 0:
            raise InputError("batch inputs must be a non-empty (batch, steps, features) array")
        if self.readout not in ("final", "all"):
            raise InputError(f"unknown readout {self.readout!r}")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.targets[idx], self.readout)


def batch_loss(arch: QRUArchitecture, params, batch: Batch, spec: LossSpec) -> float:
    return compiled(arch).loss(_as_values(arch, params), batch.inputs, batch.targets, spec, batch.readout)


def gradient(arch: QRUArchitecture, params, batch: Batch, spec: LossSpec) -> np.ndarray:
    values = _as_values(arch, params)
    _, grad = compiled(arch).loss_and_grad(values, batch.inputs, batch.targets, spec, batch.readout)
    return grad


def loss_and_gradient(arch: QRUArchitecture, params, batch: Batch, spec: LossSpec):
    values = _as_values(arch, params)
    return compiled(arch).loss_and_grad(values, batch.inputs, batch.targets, spec, batch.readout)


def reference_loss(arch: QRUArchitecture, params, batch: Batch, spec: LossSpec):
    """Loss from the gate-level simulator, one sequence at a time."""
    values = _as_values(arch, params)
    outputs = np.array([run_sequence(arch, values, seq).per_step_outputs for seq in batch.inputs])
    raw = outputs[:, -1] if batch.readout == "final" else outputs
    layout = ParameterLayout.from_arch(arch)
    scale = 1.0 if layout.scale_index is None else values[layout.scale_index]
    return compute_loss(spec, raw, scale, batch.targets)


def central_difference(fn, x, step: float, dtype=np.float64) -> np.ndarray:
    """(f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate i, evaluated in ``dtype``."""
    if step <= 0:
        raise InputError("finite-difference step must be positive")
    x = np.asarray(x, dtype=dtype)
    h = dtype(step)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (fn(xp) - fn(xm)) / (2 * h)
    return grad.astype(np.float64)


def finite_difference_gradient(
    arch, params, batch: Batch, spec: LossSpec, step: float = 1e-5, dtype=np.longdouble
) -> np.ndarray:
    values = _as_values(arch, params)
    return central_difference(lambda p: reference_loss(arch, p, batch, spec), values, step, dtype)


def max_relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.abs(analytic), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))

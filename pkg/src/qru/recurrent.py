"""Chaining cells through measured hidden states, with one shared parameter vector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cell import QRUArchitecture, build_cell_circuit, circuit_depth, forward_cell
from .errors import ConfigError, InputError
from .statevector import as_real


@dataclass(frozen=True)
class SequenceOutput:
    per_step_outputs: np.ndarray  # (T, n_out), raw <Z> values
    final_hidden: np.ndarray  # (2H,)


def as_sequence(arch: QRUArchitecture, seq) -> np.ndarray:
    """Validate a sequence as a (T, input_dim) array; errors name the offending step."""
    if isinstance(seq, np.ndarray) and seq.ndim == 2:
        rows = list(seq)
    else:
        rows = [np.atleast_1d(np.asarray(s, dtype=float)) for s in seq]
    if not rows:
        raise InputError("sequence must contain at least one step")
    for t, row in enumerate(rows):
        if row.shape != (arch.input_dim,):
            raise InputError(f"step {t} has dimension {row.size}, architecture encodes {arch.input_dim}")
    return np.asarray(rows, dtype=float)


def run_sequence(arch: QRUArchitecture, params, seq, h0=None) -> SequenceOutput:
    """Feed ``seq`` step by step, re-encoding each step's measured hidden state."""
    steps = as_sequence(arch, seq)
    h = np.zeros(arch.hidden_dim) if h0 is None else as_real(h0)
    outputs = []
    for x in steps:
        out = forward_cell(arch, params, x, h)
        outputs.append(out.outputs)
        h = out.next_hidden
    return SequenceOutput(np.array(outputs), h)


def emitted_circuits(arch: QRUArchitecture, params, seq, h0=None) -> list[tuple[int, int]]:
    """(gate count, depth) of the circuit emitted at each step of ``seq``.

    Each step's circuit is built from the hidden state actually measured at
    the previous step, so this reflects what a device would execute.
    """
    steps = as_sequence(arch, seq)
    h = np.zeros(arch.hidden_dim) if h0 is None else as_real(h0)
    shapes = []
    for x in steps:
        gates = build_cell_circuit(arch, params, x, h)
        shapes.append((len(gates), circuit_depth(gates, arch.num_qubits)))
        h = forward_cell(arch, params, x, h).next_hidden
    return shapes


def self_feedback_rollout(
    arch: QRUArchitecture,
    params,
    seed_input: float,
    horizon: int,
    warmup=None,
    output_to_input: Callable[[float], float] = lambda y: y,
) -> np.ndarray:
    """Autoregressive prediction.

    ``warmup`` (true values) builds the hidden state; ``seed_input`` is the last
    true value, whose one-step output is the first prediction. Every prediction
    after that is mapped through ``output_to_input`` and fed back in.
    """
    if len(arch.output_qubits) != 1 or arch.input_dim != 1:
        raise ConfigError("self-feedback needs a scalar input and a scalar output plan")
    if horizon < 1:
        raise InputError("horizon must be >= 1")
    h = np.zeros(arch.hidden_dim)
    if warmup is not None and len(warmup) > 0:
        h = run_sequence(arch, params, warmup).final_hidden
    current = float(seed_input)
    preds = []
    for _ in range(horizon):
        out = forward_cell(arch, params, [current], h)
        y = float(out.outputs[0])
        preds.append(y)
        h = out.next_hidden
        current = output_to_input(y)
    return np.array(preds)

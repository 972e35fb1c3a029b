"""Batched forward pass and exact reverse-mode gradients for QRU sequences.

A cell circuit splits into three pieces with very different costs:

* the encoding acts on |0...0>, so its output is a product state built from
  one 2-vector per encoded qubit;
* the CNOT ring and the C-SWAPs only permute basis states, so they reduce to
  a fixed scatter of product-state amplitudes;
* the variational layers do not depend on the data, so within one parameter
  update they are a single unitary ``U`` on the "core" qubits (data, hidden and
  any layer-covered ancilla). Untouched ancillas are spectators: after the
  C-SWAPs each spectator basis value labels an independent branch that ``U``
  acts on separately.

The backward pass is hand-derived. For a real loss L and complex intermediate
z we carry ``g = dL/d(conj z)``-style cotangents with ``dL = Re <g, dz>``;
``U``'s angle gradients come from one adjoint sweep over the layer gates
applied to ``Gamma = sum_n g_n phi_n^dagger``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .cell import ParameterLayout, QRUArchitecture, encoding_slots, fixed_block, ring_pairs
from .errors import InputError
from .losses import LossSpec, loss_and_grad_outputs
from ._kernels import (
    CNOT,
    FAMILY_CODES,
    gate_tables,
    sequence_backward,
    sequence_forward,
    unitary_grad,
    unitary_rows,
)
from .statevector import permute_basis_index


class CompiledQRU:
    def __init__(self, arch: QRUArchitecture):
        self.arch = arch
        self.layout = ParameterLayout.from_arch(arch)
        n = arch.num_qubits
        covered = {q for layer in arch.layers for q in layer.qubits}
        self.core = sorted(set(arch.encoded_qubits) | covered)
        spectators = [q for q in range(n) if q not in self.core]
        self.m = len(self.core)
        self.dim = 1 << self.m
        self.branches = 1 << len(spectators)
        local = {q: k for k, q in enumerate(self.core)}

        # product-state index -> (spectator branch, core index) after the fixed block
        enc = list(arch.encoded_qubits)
        self.n_enc_qubits = len(enc)
        e = np.arange(1 << len(enc))
        full = np.zeros_like(e)
        for k, q in enumerate(enc):
            full |= ((e >> (len(enc) - 1 - k)) & 1) << (n - 1 - q)
        for gate in fixed_block(arch):
            full = permute_basis_index(full, gate, n)

        def pack(qubits):
            out = np.zeros_like(full)
            for k, q in enumerate(qubits):
                out |= ((full >> (n - 1 - q)) & 1) << (len(qubits) - 1 - k)
            return out

        scatter_core = pack(self.core)
        scatter_branch = pack(spectators)
        # product amplitudes grouped by spectator branch (stable in e)
        order = np.argsort(scatter_branch, kind="stable")
        self.br_e = order.astype(np.int64)
        self.br_core = scatter_core[order].astype(np.int64)
        counts = np.bincount(scatter_branch, minlength=self.branches)
        self.br_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

        # encoding slots -> (encoded-qubit position, angle kind 0=rx 1=ry)
        slots = encoding_slots(arch)
        enc_pos = {q: k for k, q in enumerate(enc)}
        self.slot_qubit = np.array([enc_pos[q] for _, q, _, _ in slots], dtype=int)
        self.slot_axis = np.array([0 if ax == "rx" else 1 for ax, _, _, _ in slots], dtype=int)
        # routed input vector is concat(x, h_prev)
        self.slot_source = np.array(
            [i if src == "x" else arch.input_dim + i for _, _, src, i in slots], dtype=int
        )

        # readout
        z_qubits = list(arch.output_qubits) + list(arch.hidden_qubits)
        idx = np.arange(self.dim)
        self.z_signs = np.ascontiguousarray(np.stack(
            [1.0 - 2.0 * ((idx >> (self.m - 1 - local[q])) & 1) for q in z_qubits], axis=1
        ), dtype=float) if z_qubits else np.zeros((self.dim, 0))
        self.n_out = len(arch.output_qubits)
        self.x_masks = np.array([1 << (self.m - 1 - local[q]) for q in arch.hidden_qubits], dtype=np.int64)

        # variational gates as flat tables: kind code, core-local qubits, parameter indices
        kinds, q0, q1, pidx = [], [], [], []
        for layer, sl in zip(arch.layers, self.layout.layer_slices):
            k = layer.angles_per_gate
            for j, q in enumerate(layer.qubits):
                start = sl.start + j * k
                kinds.append(FAMILY_CODES[layer.family])
                q0.append(local[q])
                q1.append(-1)
                pidx.append(list(range(start, start + k)) + [-1] * (3 - k))
            if layer.entangle:
                for c, t in ring_pairs(layer.qubits):
                    kinds.append(CNOT)
                    q0.append(local[c])
                    q1.append(local[t])
                    pidx.append([-1, -1, -1])
        self.op_kind = np.array(kinds, dtype=np.int64)
        self.op_q0 = np.array(q0, dtype=np.int64)
        self.op_q1 = np.array(q1, dtype=np.int64)
        self.op_params = np.array(pidx, dtype=np.int64).reshape(-1, 3)
        self.op_n_angles = (self.op_params >= 0).sum(axis=1).astype(np.int64)

    # -- variational unitary ------------------------------------------------
    def _gate_tables(self, params):
        angles = np.where(self.op_params >= 0, params[np.maximum(self.op_params, 0)], 0.0)
        return gate_tables(self.op_kind, np.ascontiguousarray(angles))

    def unitary_rows(self, params: np.ndarray) -> np.ndarray:
        """U^T: row i is U applied to core basis state i."""
        mats, _ = self._gate_tables(np.asarray(params, dtype=float))
        return unitary_rows(self.op_kind, self.op_q0, self.op_q1, mats, self.m)

    def _unitary_grad(self, params, ut, gamma_t, grad):
        """Accumulate Re<Gamma, dU/dtheta> for every layer angle into ``grad``."""
        mats, dmats = self._gate_tables(params)
        per_op = unitary_grad(ut, gamma_t, self.op_kind, self.op_q0, self.op_q1, self.op_n_angles, mats, dmats, self.m)
        used = self.op_params >= 0
        np.add.at(grad, self.op_params[used], per_op[used])

    # -- sequences ------------------------------------------------------------
    def _check_inputs(self, inputs):
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim != 3 or inputs.shape[2] != self.arch.input_dim:
            raise InputError(
                f"inputs must be (batch, steps, {self.arch.input_dim}), got {inputs.shape}"
            )
        return inputs

    def _kernel_args(self, params):
        pairs = np.ascontiguousarray(params[: 2 * self.layout.n_encoding].reshape(-1, 2))
        return (
            pairs, self.slot_source, self.slot_qubit, self.slot_axis, self.n_enc_qubits,
            self.br_offsets, self.br_e, self.br_core, self.z_signs, self.x_masks, self.n_out,
        )

    def forward(self, params, inputs, chunk: int = 512):
        """Raw outputs for every step, shape (B, T, n_out), and the final hidden states."""
        params = np.asarray(params, dtype=float)
        inputs = self._check_inputs(inputs)
        ut = self.unitary_rows(params)
        args = self._kernel_args(params)
        ys, hs = [], []
        for start in range(0, inputs.shape[0], chunk):
            y, h, *_ = sequence_forward(ut, *args, inputs[start:start + chunk], False)
            ys.append(y)
            hs.append(h)
        return np.concatenate(ys, axis=0), np.concatenate(hs, axis=0)

    def loss(self, params, inputs, targets, spec: LossSpec, readout: str = "final") -> float:
        y, _ = self.forward(params, inputs)
        raw = y[:, -1] if readout == "final" else y
        loss, _, _ = loss_and_grad_outputs(spec, raw, self._scale(params), targets)
        return float(loss)

    def _scale(self, params):
        idx = self.layout.scale_index
        return 1.0 if idx is None else float(params[idx])

    def loss_and_grad(self, params, inputs, targets, spec: LossSpec, readout: str = "final"):
        params = np.asarray(params, dtype=float)
        inputs = self._check_inputs(inputs)
        ut = self.unitary_rows(params)
        args = self._kernel_args(params)
        ys, _, outs, vs, dvs, routeds = sequence_forward(ut, *args, inputs, True)
        raw = ys[:, -1] if readout == "final" else ys
        loss, d_raw, d_scale = loss_and_grad_outputs(spec, raw, self._scale(params), targets)
        if readout == "final":
            d_ys = np.zeros_like(ys)
            d_ys[:, -1] = d_raw
        else:
            d_ys = np.ascontiguousarray(d_raw, dtype=float)

        gamma_t, grad_pairs = sequence_backward(ut, *args, d_ys, outs, vs, dvs, routeds)
        grad = np.zeros_like(params)
        grad[: 2 * self.layout.n_encoding] = grad_pairs.reshape(-1)
        self._unitary_grad(params, ut, gamma_t, grad)
        if self.layout.has_scale:
            grad[self.layout.scale_index] += d_scale
        return float(loss), grad


@lru_cache(maxsize=32)
def compiled(arch: QRUArchitecture) -> CompiledQRU:
    return CompiledQRU(arch)

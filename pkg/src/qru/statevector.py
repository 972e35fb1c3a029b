"""Dense statevector simulation for the QRU gate set.

Basis convention: qubit 0 is the most significant bit of the basis index, so
``|q0 q1 q2>`` with q0=1, q1=0, q2=1 is index 0b101 = 5.

Rotations follow R_a(theta) = exp(-i theta sigma_a / 2). The composite gates are

    U2(phi, lam)            = Rz(phi) Ry(pi/2) Rz(lam)
    Rot(phi, theta, omega)  = Rz(omega) Ry(theta) Rz(phi)

Kernels work in place on arrays shaped ``(batch, 2**n)`` by viewing the
state axis as ``(2**q, 2, 2**(n-q-1))``; no 2**n x 2**n matrices are built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

MAX_QUBITS = 14

SINGLE_QUBIT_KINDS = {"rx": 1, "ry": 1, "rz": 1, "u2": 2, "rot": 3, "h": 0}
MULTI_QUBIT_KINDS = {"cnot": 2, "cswap": 3}

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2.0)


# ---------------------------------------------------------------------------
# 2x2 matrices
# ---------------------------------------------------------------------------

def as_real(a) -> np.ndarray:
    """Float array that keeps extended precision (longdouble) when the input has it."""
    a = np.asarray(a)
    return a.astype(np.result_type(a, np.float64), copy=False)


def _cdtype(theta):
    # complex128 for ordinary floats; clongdouble when angles carry extended precision
    return np.result_type(theta, np.complex128)


def rx(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=_cdtype(theta))


def ry(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=_cdtype(theta))


def rz(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c - 1j * s, 0], [0, c + 1j * s]], dtype=_cdtype(theta))


def u2(phi, lam):
    quarter = np.asarray(np.pi, dtype=np.result_type(phi, lam, float)) / 2
    return rz(phi) @ ry(quarter) @ rz(lam)


def rot(phi, theta, omega):
    return rz(omega) @ ry(theta) @ rz(phi)


def gate_matrix(kind: str, params=()) -> np.ndarray:
    """2x2 unitary of a single-qubit gate."""
    if kind == "rx":
        return rx(params[0])
    if kind == "ry":
        return ry(params[0])
    if kind == "rz":
        return rz(params[0])
    if kind == "u2":
        return u2(params[0], params[1])
    if kind == "rot":
        return rot(params[0], params[1], params[2])
    if kind == "h":
        return HADAMARD.copy()
    raise ConfigError(f"no 2x2 matrix for gate kind {kind!r}")


def gate_matrix_derivatives(kind: str, params=()) -> list[np.ndarray]:
    """Partial derivatives of ``gate_matrix(kind, params)`` w.r.t. each angle."""
    if kind in ("rx", "ry", "rz"):
        sigma = {"rx": PAULI_X, "ry": PAULI_Y, "rz": PAULI_Z}[kind]
        return [-0.5j * sigma @ gate_matrix(kind, params)]
    if kind == "u2":
        phi, lam = params
        a, b, c = rz(phi), ry(np.pi / 2), rz(lam)
        return [-0.5j * PAULI_Z @ a @ b @ c, a @ b @ c @ (-0.5j * PAULI_Z)]
    if kind == "rot":
        phi, theta, omega = params
        a, b, c = rz(omega), ry(theta), rz(phi)
        return [
            a @ b @ c @ (-0.5j * PAULI_Z),
            a @ (-0.5j * PAULI_Y) @ b @ c,
            -0.5j * PAULI_Z @ a @ b @ c,
        ]
    return []


# ---------------------------------------------------------------------------
# In-place kernels on (batch, 2**n) arrays
# ---------------------------------------------------------------------------

def apply_1q(amps: np.ndarray, matrix: np.ndarray, qubit: int, num_qubits: int) -> None:
    view = amps.reshape(amps.shape[0], 1 << qubit, 2, -1)
    lo = view[:, :, 0, :]
    hi = view[:, :, 1, :]
    if matrix[0, 1] == 0 and matrix[1, 0] == 0:
        lo *= matrix[0, 0]
        hi *= matrix[1, 1]
        return
    old_lo = lo.copy()
    lo *= matrix[0, 0]
    lo += matrix[0, 1] * hi
    hi *= matrix[1, 1]
    hi += matrix[1, 0] * old_lo


def _axis_index(num_qubits: int, fixed: dict[int, int]):
    idx = [slice(None)] * (num_qubits + 1)
    for q, bit in fixed.items():
        idx[q + 1] = bit
    return tuple(idx)


def apply_cnot(amps: np.ndarray, control: int, target: int, num_qubits: int) -> None:
    view = amps.reshape((amps.shape[0],) + (2,) * num_qubits)
    a = _axis_index(num_qubits, {control: 1, target: 0})
    b = _axis_index(num_qubits, {control: 1, target: 1})
    tmp = view[a].copy()
    view[a] = view[b]
    view[b] = tmp


def apply_cswap(amps: np.ndarray, control: int, t1: int, t2: int, num_qubits: int) -> None:
    view = amps.reshape((amps.shape[0],) + (2,) * num_qubits)
    a = _axis_index(num_qubits, {control: 1, t1: 1, t2: 0})
    b = _axis_index(num_qubits, {control: 1, t1: 0, t2: 1})
    tmp = view[a].copy()
    view[a] = view[b]
    view[b] = tmp


def permute_basis_index(index, gate: "GateOp", num_qubits: int):
    """Image of basis index/indices under a permutation gate (CNOT or CSWAP)."""
    index = np.asarray(index)

    def bit(q):
        return (index >> (num_qubits - 1 - q)) & 1

    if gate.kind == "cnot":
        c, t = gate.qubits
        return index ^ (bit(c) << (num_qubits - 1 - t))
    if gate.kind == "cswap":
        c, t1, t2 = gate.qubits
        differ = bit(c) & (bit(t1) ^ bit(t2))
        mask = (1 << (num_qubits - 1 - t1)) | (1 << (num_qubits - 1 - t2))
        return index ^ (differ * mask)
    raise ConfigError(f"{gate.kind!r} is not a basis permutation")


# ---------------------------------------------------------------------------
# Public types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GateOp:
    kind: str
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()

    def validate(self, num_qubits: int) -> None:
        if self.kind in SINGLE_QUBIT_KINDS:
            n_params, n_qubits = SINGLE_QUBIT_KINDS[self.kind], 1
        elif self.kind in MULTI_QUBIT_KINDS:
            n_params, n_qubits = 0, MULTI_QUBIT_KINDS[self.kind]
        else:
            raise ConfigError(f"unknown gate kind {self.kind!r}")
        if len(self.qubits) != n_qubits:
            raise ConfigError(f"{self.kind} acts on {n_qubits} qubit(s), got {self.qubits}")
        if len(self.params) != n_params:
            raise ConfigError(f"{self.kind} takes {n_params} angle(s), got {len(self.params)}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ConfigError(f"{self.kind} qubit indices collide: {self.qubits}")
        for q in self.qubits:
            if not 0 <= q < num_qubits:
                raise ConfigError(f"qubit {q} out of range for {num_qubits}-qubit state")

    def inverse(self) -> "GateOp":
        if self.kind in ("rx", "ry", "rz"):
            return GateOp(self.kind, self.qubits, (-self.params[0],))
        if self.kind in ("cnot", "cswap", "h"):
            return self
        # U2 and Rot have no closed form inverse in the same family; callers
        # invert them through inverse_sequence().
        raise ConfigError(f"{self.kind} has no same-kind inverse")


def inverse_sequence(gates) -> list[GateOp]:
    """Gates implementing the inverse of ``gates`` (U2/Rot expanded to rotations)."""
    out = []
    for g in reversed(list(gates)):
        if g.kind == "u2":
            phi, lam = g.params
            q = g.qubits
            out += [GateOp("rz", q, (-phi,)), GateOp("ry", q, (-np.pi / 2,)), GateOp("rz", q, (-lam,))]
        elif g.kind == "rot":
            phi, theta, omega = g.params
            q = g.qubits
            out += [GateOp("rz", q, (-omega,)), GateOp("ry", q, (-theta,)), GateOp("rz", q, (-phi,))]
        else:
            out.append(g.inverse())
    return out


@dataclass(frozen=True)
class Observable:
    basis: str  # "Z" or "X"
    qubit: int

    def __post_init__(self):
        if self.basis not in ("Z", "X"):
            raise ConfigError(f"unsupported observable basis {self.basis!r}")


@dataclass
class StateVector:
    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if not 1 <= self.num_qubits <= MAX_QUBITS:
            raise ConfigError(f"num_qubits must be in [1, {MAX_QUBITS}], got {self.num_qubits}")
        amps = np.asarray(self.amplitudes)
        self.amplitudes = np.ascontiguousarray(amps, dtype=np.result_type(amps, np.complex128))
        if self.amplitudes.shape != (1 << self.num_qubits,):
            raise ConfigError(
                f"expected {1 << self.num_qubits} amplitudes, got shape {self.amplitudes.shape}"
            )

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.amplitudes, self.amplitudes).real))

    def copy(self) -> "StateVector":
        return StateVector(self.num_qubits, self.amplitudes.copy())


def init_state(num_qubits: int, dtype=np.complex128) -> StateVector:
    if not isinstance(num_qubits, (int, np.integer)) or not 1 <= num_qubits <= MAX_QUBITS:
        raise ConfigError(f"num_qubits must be an integer in [1, {MAX_QUBITS}], got {num_qubits!r}")
    amps = np.zeros(1 << num_qubits, dtype=dtype)
    amps[0] = 1.0
    return StateVector(int(num_qubits), amps)


def _apply_inplace(amps2d: np.ndarray, gate: GateOp, n: int) -> None:
    if gate.kind == "cnot":
        apply_cnot(amps2d, gate.qubits[0], gate.qubits[1], n)
    elif gate.kind == "cswap":
        apply_cswap(amps2d, *gate.qubits, n)
    else:
        apply_1q(amps2d, gate_matrix(gate.kind, gate.params), gate.qubits[0], n)


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    """Return a new state with ``gate`` applied; the input is left untouched."""
    gate.validate(state.num_qubits)
    out = state.amplitudes.copy()
    _apply_inplace(out.reshape(1, -1), gate, state.num_qubits)
    return StateVector(state.num_qubits, out)


def simulate(num_qubits: int, gates, initial: StateVector | None = None, dtype=np.complex128) -> StateVector:
    """Run a gate list from ``initial`` (default |0...0>), copying the state once."""
    state = init_state(num_qubits, dtype) if initial is None else initial.copy()
    amps = state.amplitudes.reshape(1, -1)
    for g in gates:
        g.validate(num_qubits)
        _apply_inplace(amps, g, num_qubits)
    return state


def expectation(state: StateVector, obs: Observable):
    """<P> as a real scalar (float64, or longdouble for extended-precision states)."""
    n, q = state.num_qubits, obs.qubit
    if not 0 <= q < n:
        raise ConfigError(f"observable qubit {q} out of range for {n}-qubit state")
    view = state.amplitudes.reshape(1 << q, 2, -1)
    lo, hi = view[:, 0, :], view[:, 1, :]
    if obs.basis == "Z":
        return np.vdot(lo, lo).real - np.vdot(hi, hi).real
    return 2 * np.vdot(lo, hi).real


def expectation_x_by_basis_change(state: StateVector, qubit: int) -> float:
    """<X_q> computed as <Z_q> after a Hadamard; cross-check for ``expectation``."""
    rotated = apply_gate(state, GateOp("h", (qubit,)))
    return expectation(rotated, Observable("Z", qubit))

"""One QRU time step: architecture blueprint, parameter layout and the gate-level circuit.

The circuit of a cell, in order:

1. angle encoding ``Rx(w*x + b)`` (and ``Ry`` for two-value qubits) on data qubits,
2. the same encoding of the previous hidden state on hidden qubits,
3. a circular CNOT ring over all encoded qubits,
4. C-SWAPs ``(control; target, ancilla)`` that move a hidden qubit into a fresh
   ancilla when the control is |1>,
5. variational layers, each a column of parameterised rotations followed by a
   CNOT ring over the layer's qubits,

followed by Pauli-Z readout of the output qubits and Z/X readout of the hidden
qubits. Ancillas start in |0> and are never encoded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .statevector import (
    as_real,
    MAX_QUBITS,
    GateOp,
    Observable,
    expectation,
    simulate,
)

LAYER_FAMILIES = {"rx": 1, "ry": 1, "rz": 1, "u2": 2, "rot": 3}


@dataclass(frozen=True)
class LayerSpec:
    family: str
    qubits: tuple[int, ...]
    entangle: bool = True

    @property
    def angles_per_gate(self) -> int:
        return LAYER_FAMILIES[self.family]

    @property
    def num_params(self) -> int:
        return len(self.qubits) * self.angles_per_gate


def ring_pairs(qubits) -> list[tuple[int, int]]:
    """CNOT (control, target) pairs of a circular ring; two qubits get a single CNOT."""
    qubits = list(qubits)
    if len(qubits) < 2:
        return []
    if len(qubits) == 2:
        return [(qubits[0], qubits[1])]
    return [(qubits[i], qubits[(i + 1) % len(qubits)]) for i in range(len(qubits))]


def default_cswap_wiring(n_data: int, n_hidden: int, n_ancilla: int) -> tuple[tuple[int, int, int], ...]:
    """Triple i = (data i mod D, hidden i, ancilla i mod A); at least one hidden qubit is left out."""
    if n_data == 0 or n_hidden == 0 or n_ancilla == 0:
        return ()
    count = min(n_hidden - 1, 2 * n_ancilla)
    return tuple(
        (i % n_data, n_data + i, n_data + n_hidden + i % n_ancilla) for i in range(count)
    )


@dataclass(frozen=True)
class QRUArchitecture:
    n_data: int
    n_hidden: int
    n_ancilla: int = 0
    data_axes: tuple[tuple[str, ...], ...] = (("rx",),)
    cswaps: tuple[tuple[int, int, int], ...] = ()
    layers: tuple[LayerSpec, ...] = ()
    output_qubits: tuple[int, ...] = (0,)
    use_scale: bool = False
    name: str = ""

    def __post_init__(self):
        self.validate()

    # -- qubit roles ------------------------------------------------------
    @property
    def num_qubits(self) -> int:
        return self.n_data + self.n_hidden + self.n_ancilla

    @property
    def data_qubits(self) -> tuple[int, ...]:
        return tuple(range(self.n_data))

    @property
    def hidden_qubits(self) -> tuple[int, ...]:
        return tuple(range(self.n_data, self.n_data + self.n_hidden))

    @property
    def ancilla_qubits(self) -> tuple[int, ...]:
        return tuple(range(self.n_data + self.n_hidden, self.num_qubits))

    @property
    def input_dim(self) -> int:
        return sum(len(a) for a in self.data_axes)

    @property
    def hidden_dim(self) -> int:
        return 2 * self.n_hidden

    @property
    def encoded_qubits(self) -> tuple[int, ...]:
        return self.data_qubits + self.hidden_qubits

    @property
    def n_encoding_gates(self) -> int:
        return self.input_dim + 2 * self.n_hidden

    def validate(self) -> None:
        if min(self.n_data, self.n_hidden, self.n_ancilla) < 0 or self.n_data < 1:
            raise ConfigError("need at least one data qubit and non-negative role counts")
        if self.num_qubits > MAX_QUBITS:
            raise ConfigError(f"{self.num_qubits} qubits exceeds the {MAX_QUBITS}-qubit limit")
        if len(self.data_axes) != self.n_data:
            raise ConfigError(f"data_axes lists {len(self.data_axes)} qubits, expected {self.n_data}")
        for axes in self.data_axes:
            if tuple(axes) not in (("rx",), ("rx", "ry")):
                raise ConfigError(f"data encoding must be ('rx',) or ('rx', 'ry'), got {axes}")
        ancillas = set(self.ancilla_qubits)
        uses = {a: 0 for a in ancillas}
        for triple in self.cswaps:
            if len(triple) != 3 or len(set(triple)) != 3:
                raise ConfigError(f"cswap triple {triple} must name three distinct qubits")
            if any(not 0 <= q < self.num_qubits for q in triple):
                raise ConfigError(f"cswap triple {triple} out of range")
            if triple[2] not in ancillas:
                raise ConfigError(f"cswap triple {triple}: last slot must be an ancilla qubit")
            uses[triple[2]] += 1
            if uses[triple[2]] > 2:
                raise ConfigError(f"ancilla {triple[2]} used in more than two C-SWAPs")
        for layer in self.layers:
            if layer.family not in LAYER_FAMILIES:
                raise ConfigError(f"unknown variational family {layer.family!r}")
            if len(set(layer.qubits)) != len(layer.qubits) or not layer.qubits:
                raise ConfigError(f"layer qubits {layer.qubits} must be non-empty and distinct")
            if any(not 0 <= q < self.num_qubits for q in layer.qubits):
                raise ConfigError(f"layer qubits {layer.qubits} out of range")
        readable = set(self.data_qubits) | set(self.hidden_qubits)
        if not self.output_qubits or any(q not in readable for q in self.output_qubits):
            raise ConfigError("output qubits must be data or hidden qubits")

    # -- measurement plans ------------------------------------------------
    @property
    def output_plan(self) -> tuple[Observable, ...]:
        return tuple(Observable("Z", q) for q in self.output_qubits)

    @property
    def hidden_plan(self) -> tuple[Observable, ...]:
        hq = self.hidden_qubits
        return tuple(Observable("Z", q) for q in hq) + tuple(Observable("X", q) for q in hq)

    # -- (de)serialisation -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_data": self.n_data,
            "n_hidden": self.n_hidden,
            "n_ancilla": self.n_ancilla,
            "data_axes": [list(a) for a in self.data_axes],
            "cswaps": [list(t) for t in self.cswaps],
            "layers": [
                {"family": l.family, "qubits": list(l.qubits), "entangle": l.entangle}
                for l in self.layers
            ],
            "output_qubits": list(self.output_qubits),
            "use_scale": self.use_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QRUArchitecture":
        known = {"name", "n_data", "n_hidden", "n_ancilla", "data_axes", "cswaps",
                 "layers", "output_qubits", "use_scale"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown architecture fields: {sorted(unknown)}")
        try:
            return cls(
                n_data=int(d["n_data"]),
                n_hidden=int(d["n_hidden"]),
                n_ancilla=int(d.get("n_ancilla", 0)),
                data_axes=tuple(tuple(a) for a in d.get("data_axes", [["rx"]] * int(d["n_data"]))),
                cswaps=tuple(tuple(int(q) for q in t) for t in d.get("cswaps", [])),
                layers=tuple(
                    LayerSpec(l["family"], tuple(int(q) for q in l["qubits"]), bool(l.get("entangle", True)))
                    for l in d.get("layers", [])
                ),
                output_qubits=tuple(int(q) for q in d.get("output_qubits", [0])),
                use_scale=bool(d.get("use_scale", False)),
                name=str(d.get("name", "")),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed architecture: {exc}") from exc


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

# (closed-form count under the default wiring, count reported for the experiment)
REFERENCE_PARAM_COUNTS = {"s1": 72, "s2": 35, "s3": 132}


def _preset(name, n_data, n_hidden, data_axes, layer_families, output_qubits, use_scale, extra_gate):
    n_ancilla = 2
    covered = tuple(range(n_data + n_hidden))
    layers = tuple(LayerSpec(f, covered) for f in layer_families)
    if extra_gate:
        layers += (LayerSpec(layer_families[-1], (0,), entangle=False),)
    return QRUArchitecture(
        n_data=n_data,
        n_hidden=n_hidden,
        n_ancilla=n_ancilla,
        data_axes=data_axes,
        cswaps=default_cswap_wiring(n_data, n_hidden, n_ancilla),
        layers=layers,
        output_qubits=output_qubits,
        use_scale=use_scale,
        name=name + ("-ref" if extra_gate else ""),
    )


def preset(name: str) -> QRUArchitecture:
    """Named architectures.

    ``s1`` (oscillation), ``s2`` (WDBC) and ``s3`` (MNIST 3-vs-5) follow the
    default wiring. The ``-ref`` variants add a single trailing gate of the
    layer family on qubit 0, which is the smallest change that reproduces the
    published counts 72/35/132.
    """
    base, _, variant = name.partition("-")
    if variant not in ("", "ref"):
        raise ConfigError(f"unknown preset {name!r}")
    extra = variant == "ref"
    if base == "s1":
        return _preset("s1", 1, 5, (("rx",),), ("u2",) * 4, (0,), False, extra)
    if base == "s2":
        return _preset("s2", 1, 4, (("rx",),), ("rx", "ry", "rx"), (0,), True, extra)
    if base == "s3":
        return _preset("s3", 4, 4, (("rx", "ry"),) * 4, ("rot",) * 4, (0, 1), True, extra)
    raise ConfigError(f"unknown preset {name!r}")


PRESET_NAMES = ("s1", "s2", "s3", "s1-ref", "s2-ref", "s3-ref")


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterLayout:
    """Flat ordering: encoding pairs (w_scale, w_bias) per gate, layer angles, then s."""

    n_encoding: int
    n_variational: int
    has_scale: bool
    layer_slices: tuple[slice, ...] = field(default=())

    @classmethod
    def from_arch(cls, arch: QRUArchitecture) -> "ParameterLayout":
        start = 2 * arch.n_encoding_gates
        slices = []
        for layer in arch.layers:
            slices.append(slice(start, start + layer.num_params))
            start += layer.num_params
        return cls(
            n_encoding=arch.n_encoding_gates,
            n_variational=start - 2 * arch.n_encoding_gates,
            has_scale=arch.use_scale,
            layer_slices=tuple(slices),
        )

    @property
    def size(self) -> int:
        return 2 * self.n_encoding + self.n_variational + int(self.has_scale)

    @property
    def encoding(self) -> slice:
        return slice(0, 2 * self.n_encoding)

    @property
    def variational(self) -> slice:
        return slice(2 * self.n_encoding, 2 * self.n_encoding + self.n_variational)

    @property
    def scale_index(self) -> int | None:
        return self.size - 1 if self.has_scale else None

    def names(self) -> list[str]:
        out = []
        for g in range(self.n_encoding):
            out += [f"enc[{g}].scale", f"enc[{g}].bias"]
        for li, sl in enumerate(self.layer_slices):
            out += [f"layer[{li}][{k}]" for k in range(sl.stop - sl.start)]
        if self.has_scale:
            out.append("s")
        return out


@dataclass
class ParameterSet:
    layout: ParameterLayout
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.size,):
            raise InputError(f"expected {self.layout.size} parameters, got shape {self.values.shape}")

    @property
    def encoding_pairs(self) -> np.ndarray:
        return self.values[self.layout.encoding].reshape(-1, 2)

    @property
    def scale(self) -> float:
        idx = self.layout.scale_index
        return 1.0 if idx is None else float(self.values[idx])


def param_count(arch: QRUArchitecture) -> int:
    return ParameterLayout.from_arch(arch).size


def init_params(arch: QRUArchitecture, rng: np.random.Generator, spread: float = math.pi / 10) -> np.ndarray:
    """Uniform draw on [-spread, spread] for every angle and encoding weight; s starts at 1."""
    layout = ParameterLayout.from_arch(arch)
    values = rng.uniform(-spread, spread, size=layout.size)
    if layout.has_scale:
        values[layout.scale_index] = 1.0
    return values


def _as_values(arch, params) -> np.ndarray:
    values = params.values if isinstance(params, ParameterSet) else as_real(params)
    expected = param_count(arch)
    if values.shape != (expected,):
        raise InputError(f"expected {expected} parameters, got shape {values.shape}")
    return values


# ---------------------------------------------------------------------------
# Circuit assembly
# ---------------------------------------------------------------------------

def encoding_slots(arch: QRUArchitecture) -> list[tuple[str, int, str, int]]:
    """Encoding gates in emission order: (axis, qubit, source, index).

    ``source`` is "x" (index into the step input) or "h" (index into the previous
    hidden state). Hidden qubit j encodes (Z_j, X_j) of the previous step.
    """
    slots = []
    k = 0
    for q, axes in enumerate(arch.data_axes):
        for axis in axes:
            slots.append((axis, q, "x", k))
            k += 1
    for j, q in enumerate(arch.hidden_qubits):
        slots.append(("rx", q, "h", j))
        slots.append(("ry", q, "h", arch.n_hidden + j))
    return slots


def fixed_block(arch: QRUArchitecture) -> list[GateOp]:
    """Parameter-free gates between encoding and the variational layers."""
    gates = [GateOp("cnot", pair) for pair in ring_pairs(arch.encoded_qubits)]
    gates += [GateOp("cswap", tuple(t)) for t in arch.cswaps]
    return gates


def variational_gates(arch: QRUArchitecture, values: np.ndarray) -> list[GateOp]:
    layout = ParameterLayout.from_arch(arch)
    gates = []
    for layer, sl in zip(arch.layers, layout.layer_slices):
        angles = values[sl].reshape(len(layer.qubits), layer.angles_per_gate)
        for q, a in zip(layer.qubits, angles):
            gates.append(GateOp(layer.family, (q,), tuple(a)))
        if layer.entangle:
            gates += [GateOp("cnot", pair) for pair in ring_pairs(layer.qubits)]
    return gates


def _check_step(arch, x, h_prev):
    x = as_real(x).reshape(-1)
    if x.shape != (arch.input_dim,):
        raise InputError(f"input has {x.size} values, encoding plan expects {arch.input_dim}")
    h_prev = np.zeros(arch.hidden_dim) if h_prev is None else as_real(h_prev).reshape(-1)
    if h_prev.shape != (arch.hidden_dim,):
        raise InputError(f"hidden state has {h_prev.size} values, expected {arch.hidden_dim}")
    return x, h_prev


def build_cell_circuit(arch: QRUArchitecture, params, x, h_prev=None) -> list[GateOp]:
    values = _as_values(arch, params)
    x, h_prev = _check_step(arch, x, h_prev)
    pairs = values[: 2 * arch.n_encoding_gates].reshape(-1, 2)
    gates = []
    for (axis, q, source, idx), (w, b) in zip(encoding_slots(arch), pairs):
        value = x[idx] if source == "x" else h_prev[idx]
        gates.append(GateOp(axis, (q,), (w * value + b,)))
    gates += fixed_block(arch)
    gates += variational_gates(arch, values)
    return gates


def circuit_depth(gates, num_qubits: int) -> int:
    """Number of time slices when every gate is scheduled as early as possible."""
    level = [0] * num_qubits
    for g in gates:
        t = max(level[q] for q in g.qubits) + 1
        for q in g.qubits:
            level[q] = t
    return max(level, default=0)


@dataclass(frozen=True)
class CellOutput:
    outputs: np.ndarray
    next_hidden: np.ndarray


def forward_cell(arch: QRUArchitecture, params, x, h_prev=None) -> CellOutput:
    """Gate-by-gate simulation of one cell on the full register (ancillas included)."""
    gates = build_cell_circuit(arch, params, x, h_prev)
    dtype = np.result_type(_as_values(arch, params), np.complex128)
    state = simulate(arch.num_qubits, gates, dtype=dtype)
    outputs = np.array([expectation(state, o) for o in arch.output_plan])
    hidden = np.array([expectation(state, o) for o in arch.hidden_plan])
    return CellOutput(outputs, hidden)

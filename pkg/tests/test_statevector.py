import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qru.errors import ConfigError
from qru.statevector import (
    GateOp,
    Observable,
    StateVector,
    apply_gate,
    expectation,
    gate_matrix,
    gate_matrix_derivatives,
    init_state,
    inverse_sequence,
    permute_basis_index,
    rot,
    rx,
    ry,
    rz,
    simulate,
    u2,
)

angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)


def product(*qubits):
    out = np.array([1.0 + 0j])
    for q in qubits:
        out = np.kron(out, q)
    return StateVector(len(qubits), out)


def test_init_state_examples():
    np.testing.assert_array_equal(init_state(1).amplitudes, [1, 0])
    np.testing.assert_array_equal(init_state(3).amplitudes, [1, 0, 0, 0, 0, 0, 0, 0])
    with pytest.raises(ConfigError):
        init_state(0)
    with pytest.raises(ConfigError):
        init_state(15)


def test_qubit_zero_is_most_significant():
    s = simulate(3, [GateOp("rx", (0,), (np.pi,))])
    assert abs(s.amplitudes[0b100]) == pytest.approx(1.0)


def test_cswap_on_product_state():
    a, b, c, d = 0.6, 0.8, 0.28, 0.96
    s = product([a, b], [c, d], [1, 0])
    out = apply_gate(s, GateOp("cswap", (0, 1, 2)))
    expected = np.zeros(8)
    expected[0b000], expected[0b010], expected[0b100], expected[0b101] = a * c, a * d, b * c, b * d
    np.testing.assert_allclose(out.amplitudes, expected, atol=1e-15)


def test_cswap_control_off_is_identity(rng):
    psi = rng.normal(size=4) + 1j * rng.normal(size=4)
    s = StateVector(3, np.kron([1, 0], psi / np.linalg.norm(psi)))
    out = apply_gate(s, GateOp("cswap", (0, 1, 2)))
    np.testing.assert_array_equal(out.amplitudes, s.amplitudes)


def test_rx_zero_is_identity(rng):
    amps = rng.normal(size=8) + 1j * rng.normal(size=8)
    s = StateVector(3, amps / np.linalg.norm(amps))
    out = apply_gate(s, GateOp("rx", (1,), (0.0,)))
    np.testing.assert_array_equal(out.amplitudes, s.amplitudes)


def test_ry_on_zero_gives_cos():
    s = simulate(1, [GateOp("ry", (0,), (0.7,))])
    assert expectation(s, Observable("Z", 0)) == pytest.approx(0.76484218728448842626, abs=1e-14)


def test_cswap_expectations_before_and_after():
    a, c = 0.6, 0.28
    b, d = np.sqrt(1 - a * a), np.sqrt(1 - c * c)
    s1 = product([a, b], [c, d], [1, 0])
    assert expectation(s1, Observable("Z", 1)) == pytest.approx(c * c - d * d, abs=1e-14)
    s2 = apply_gate(s1, GateOp("cswap", (0, 1, 2)))
    assert expectation(s2, Observable("Z", 1)) == pytest.approx(0.336448, abs=1e-14)


def test_x_expectation_of_zero_state():
    assert expectation(init_state(2), Observable("X", 1)) == 0.0


def test_x_expectation_of_plus_state():
    s = simulate(2, [GateOp("h", (1,))])
    assert expectation(s, Observable("X", 1)) == pytest.approx(1.0)
    assert expectation(s, Observable("Z", 1)) == pytest.approx(0.0, abs=1e-15)


def test_composite_gate_definitions():
    phi, lam, th = 0.3, -1.1, 0.8
    np.testing.assert_allclose(u2(phi, lam), rz(phi) @ ry(np.pi / 2) @ rz(lam), atol=1e-15)
    np.testing.assert_allclose(rot(phi, th, lam), rz(lam) @ ry(th) @ rz(phi), atol=1e-15)


@pytest.mark.parametrize("kind,n", [("rx", 1), ("ry", 1), ("rz", 1), ("u2", 2), ("rot", 3)])
def test_matrix_derivatives_match_finite_differences(kind, n, rng):
    params = rng.uniform(-3, 3, size=n)
    h = 1e-6
    for i, dm in enumerate(gate_matrix_derivatives(kind, params)):
        p, m = params.copy(), params.copy()
        p[i] += h
        m[i] -= h
        fd = (gate_matrix(kind, p) - gate_matrix(kind, m)) / (2 * h)
        np.testing.assert_allclose(dm, fd, atol=1e-8)


def test_bad_gates_rejected():
    with pytest.raises(ConfigError):
        apply_gate(init_state(2), GateOp("cnot", (0, 0)))
    with pytest.raises(ConfigError):
        apply_gate(init_state(2), GateOp("rx", (2,), (0.1,)))
    with pytest.raises(ConfigError):
        apply_gate(init_state(2), GateOp("foo", (0,)))
    with pytest.raises(ConfigError):
        expectation(init_state(2), Observable("Z", 3))
    with pytest.raises(ConfigError):
        Observable("Y", 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["rx", "ry", "rz", "u2", "rot"]), st.integers(0, 3),
                          st.tuples(angles, angles, angles)), min_size=1, max_size=12))
def test_unitarity_and_inverse(ops):
    n = 4
    gates = []
    for i, (kind, q, ang) in enumerate(ops):
        k = {"rx": 1, "ry": 1, "rz": 1, "u2": 2, "rot": 3}[kind]
        gates.append(GateOp(kind, (q,), ang[:k]))
        gates.append(GateOp("cnot", (q, (q + 1) % n)))
        if i % 3 == 0:
            gates.append(GateOp("cswap", (q, (q + 1) % n, (q + 2) % n)))
    s = simulate(n, gates)
    assert s.norm() == pytest.approx(1.0, abs=1e-12)
    back = simulate(n, inverse_sequence(gates), initial=s)
    np.testing.assert_allclose(back.amplitudes, init_state(n).amplitudes, atol=1e-12)
    for q in range(n):
        for basis in "ZX":
            assert -1 - 1e-12 <= expectation(s, Observable(basis, q)) <= 1 + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 31), st.permutations(range(5)))
def test_permutation_index_matches_simulation(index, order):
    n = 5
    for gate in (GateOp("cnot", tuple(order[:2])), GateOp("cswap", tuple(order[:3]))):
        amps = np.zeros(1 << n, dtype=complex)
        amps[index] = 1
        out = apply_gate(StateVector(n, amps), gate)
        assert np.argmax(np.abs(out.amplitudes)) == permute_basis_index(index, gate, n)


def test_apply_gate_does_not_mutate_input():
    s = init_state(2)
    before = s.amplitudes.copy()
    apply_gate(s, GateOp("ry", (0,), (1.0,)))
    np.testing.assert_array_equal(s.amplitudes, before)


def test_extended_precision_state():
    s = simulate(1, [GateOp("ry", (0,), (np.longdouble("0.7"),))], dtype=np.clongdouble)
    assert s.amplitudes.dtype == np.clongdouble
    err = expectation(s, Observable("Z", 0)) - np.longdouble("0.76484218728448842626")
    assert abs(err) < 1e-17

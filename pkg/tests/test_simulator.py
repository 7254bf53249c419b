import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import kron_word, random_hamiltonian
from vqpe.operators import dense_matrix, word_sort_key
from vqpe.simulator import (
    Circuit,
    CircuitError,
    ExactPropagator,
    Gate,
    MeasurementBackend,
    StateVector,
    TrotterPropagator,
    apply_circuit,
    circuit_matrix,
    exact_propagator,
    hadamard_test,
    hadamard_test_weighted,
    hartree_fock_state,
    measure_element,
    pauli_gadget,
    trotter_step,
)

words3 = st.lists(st.sampled_from("IXYZ"), min_size=3, max_size=3).map(
    lambda ls: tuple((q, c) for q, c in enumerate(ls) if c != "I")).filter(bool)
angles = st.floats(-4, 4, allow_nan=False)


def _unitary(rng, dim):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _random_state(rng, n):
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return StateVector.from_array(v, normalize=True)


@pytest.mark.parametrize("gate, expected", [
    (Gate("H", (0,)), np.array([[1, 1], [1, -1]]) / math.sqrt(2)),
    (Gate("X", (0,)), np.array([[0, 1], [1, 0]])),
    (Gate("RZ", (0,), 0.3), np.diag([np.exp(-0.15j), np.exp(0.15j)])),
    (Gate("RX", (0,), 0.3), expm(-0.15j * np.array([[0, 1], [1, 0]]))),
    (Gate("GPHASE", (), 0.3), np.exp(0.3j) * np.eye(2)),
])
def test_single_qubit_gates(gate, expected):
    np.testing.assert_allclose(circuit_matrix(Circuit(1, (gate,))), expected, atol=1e-14)


def test_two_qubit_gates_control_on_first_wire():
    cnot = circuit_matrix(Circuit(2, (Gate("CNOT", (0, 1)),)))
    # control qubit 0 (LSB): |01> (index 1) -> |11> (index 3)
    assert cnot[3, 1] == 1 and cnot[1, 3] == 1 and cnot[0, 0] == 1 and cnot[2, 2] == 1
    crz = circuit_matrix(Circuit(2, (Gate("CRZ", (1, 0), 0.4),)))
    np.testing.assert_allclose(np.diag(crz), [1, 1, np.exp(-0.2j), np.exp(0.2j)], atol=1e-14)


def test_circuit_validation():
    with pytest.raises(CircuitError):
        Circuit(2, (Gate("X", (2,)),))
    with pytest.raises(CircuitError):
        Circuit(2, (Gate("CNOT", (1, 1)),))
    with pytest.raises(CircuitError):
        Circuit(1, (Gate("RZ", (0,), float("nan")),))


def test_state_vector_checks_norm():
    with pytest.raises(CircuitError):
        StateVector(1, np.array([1.0, 1.0]))
    assert hartree_fock_state(4, 2).amplitudes[3] == 1


@settings(max_examples=60, deadline=None)
@given(words3, angles)
def test_pauli_gadget_is_exponential(word, theta):
    expected = expm(-0.5j * theta * kron_word(word, 3))
    np.testing.assert_allclose(circuit_matrix(pauli_gadget(word, theta, 3)), expected, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(words3, angles)
def test_controlled_gadget_is_block_diagonal(word, theta):
    c = pauli_gadget(word, theta, 3).controlled(3)
    U = expm(-0.5j * theta * kron_word(word, 3))
    expected = np.block([[np.eye(8), np.zeros((8, 8))], [np.zeros((8, 8)), U]])
    np.testing.assert_allclose(circuit_matrix(c), expected, atol=1e-12)


def test_controlled_global_phase():
    c = Circuit(1, (Gate("GPHASE", (), 0.7),)).controlled(1)
    np.testing.assert_allclose(np.diag(circuit_matrix(c)), [1, 1, np.exp(0.7j), np.exp(0.7j)], atol=1e-14)


def test_inverse_and_power():
    rng = np.random.default_rng(0)
    H = random_hamiltonian(rng, 3, 6)
    step = trotter_step(H, 0.3)
    np.testing.assert_allclose(circuit_matrix(step + step.inverse()), np.eye(8), atol=1e-12)
    np.testing.assert_allclose(circuit_matrix(step.power(3)),
                               np.linalg.matrix_power(circuit_matrix(step), 3), atol=1e-12)


def test_trotter_step_is_ordered_product(dimer):
    dt = 0.2
    expected = np.eye(16, dtype=complex)
    for t in sorted(dimer.terms, key=lambda t: word_sort_key(t.word)):
        expected = expm(-1j * dt * t.coefficient.real * kron_word(t.word, 4)) @ expected
    np.testing.assert_allclose(circuit_matrix(trotter_step(dimer, dt)), expected, atol=1e-12)


def test_trotter_counts_scale_linearly(dimer):
    step = trotter_step(dimer, 0.1)
    for j in (1, 2, 7):
        assert step.power(j).gate_count() == j * step.gate_count()
        assert step.power(j).cnot_count() == j * step.cnot_count()


def test_gate_counting_rules():
    c = Circuit(2, (Gate("GPHASE", (), 1.0), Gate("CRZ", (0, 1), 0.1), Gate("CNOT", (0, 1)), Gate("H", (0,))))
    assert c.gate_count() == 3
    assert c.cnot_count() == 3


def test_propagators_agree_for_commuting_terms():
    from vqpe.operators import QubitHamiltonian, PauliTerm
    H = QubitHamiltonian(2, (PauliTerm(0.4, ((0, "Z"),)), PauliTerm(-0.3, ((0, "Z"), (1, "Z"))),
                             PauliTerm(1.1, ())))
    np.testing.assert_allclose(circuit_matrix(TrotterPropagator(H, 0.5).power(3)),
                               ExactPropagator(H, 0.5).power(3), atol=1e-12)


def test_exact_propagator_matches_expm(dimer):
    np.testing.assert_allclose(exact_propagator(dimer, 0.37), expm(-0.37j * dense_matrix(dimer)), atol=1e-12)


@pytest.mark.parametrize("kind", ["dense", "circuit", "none"])
def test_hadamard_test_exact(kind):
    rng = np.random.default_rng(3)
    psi = _random_state(rng, 3)
    H = random_hamiltonian(rng, 3, 5)
    if kind == "dense":
        bj, bk = _unitary(rng, 8), _unitary(rng, 8)
        mj, mk = bj, bk
    elif kind == "circuit":
        bj, bk = trotter_step(H, 0.3), trotter_step(H, 0.3).power(2)
        mj, mk = circuit_matrix(bj), circuit_matrix(bk)
    else:
        bj, bk, mj, mk = None, _unitary(rng, 8), np.eye(8), None
        mk = bk
    a, b = mj @ psi.amplitudes, mk @ psi.amplitudes
    ov = np.vdot(a, b)
    assert hadamard_test(bj, bk, psi, "Z") == pytest.approx(ov.real, abs=1e-12)
    assert hadamard_test(bj, bk, psi, "Y") == pytest.approx(ov.imag, abs=1e-12)
    hv = np.vdot(a, dense_matrix(H) @ b)
    assert hadamard_test_weighted(bj, bk, psi, H, "Z") == pytest.approx(hv.real, abs=1e-12)
    assert hadamard_test_weighted(bj, bk, psi, H, "Y") == pytest.approx(hv.imag, abs=1e-12)
    assert measure_element(bj, bk, psi, H) == pytest.approx(hv, abs=1e-12)


def test_shot_mode_is_seeded_and_keyed():
    rng = np.random.default_rng(5)
    psi = _random_state(rng, 2)
    U = _unitary(rng, 4)
    b1 = MeasurementBackend("shots", 1000, seed=9)
    v1 = hadamard_test(None, U, psi, "Z", b1, (1, 2))
    assert v1 == hadamard_test(None, U, psi, "Z", b1, (1, 2))
    draws = {hadamard_test(None, U, psi, "Z", b1, (1, k)) for k in range(20)}
    assert len(draws) > 5
    # one element measured jointly equals the two separate tests
    z = measure_element(None, U, psi, None, b1, (4,))
    assert z == complex(hadamard_test(None, U, psi, "Z", b1, (4,)), hadamard_test(None, U, psi, "Y", b1, (4,)))


def test_shot_mode_statistics():
    rng = np.random.default_rng(6)
    psi = _random_state(rng, 2)
    U = _unitary(rng, 4)
    exact = hadamard_test(None, U, psi, "Z")
    shots = 4000
    backend = MeasurementBackend("shots", shots, seed=1)
    samples = np.array([hadamard_test(None, U, psi, "Z", backend, (k,)) for k in range(300)])
    sd = math.sqrt((1 - exact ** 2) / shots)
    assert abs(samples.mean() - exact) < 5 * sd / math.sqrt(len(samples))
    assert samples.std() == pytest.approx(sd, rel=0.2)
    assert np.all(np.abs(samples) <= 1)


def test_weighted_shot_mode_is_unbiased():
    rng = np.random.default_rng(7)
    psi = _random_state(rng, 2)
    H = random_hamiltonian(rng, 2, 4)
    U = _unitary(rng, 4)
    exact = hadamard_test_weighted(None, U, psi, H, "Y")
    backend = MeasurementBackend("shots", 2000, seed=2)
    samples = np.array([hadamard_test_weighted(None, U, psi, H, "Y", backend, (k,)) for k in range(300)])
    scale = sum(abs(t.coefficient) for t in H.terms)
    assert abs(samples.mean() - exact) < 5 * scale / math.sqrt(2000 / len(H.non_identity_terms) * 300)


def test_backend_validation():
    with pytest.raises(ValueError):
        MeasurementBackend("noisy")
    with pytest.raises(ValueError):
        MeasurementBackend("shots", 0)


def test_apply_circuit_checks_size():
    with pytest.raises(CircuitError):
        apply_circuit(Circuit(2), np.ones(8) / math.sqrt(8))

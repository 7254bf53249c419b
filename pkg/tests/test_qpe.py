import math

import numpy as np
import pytest

from conftest import random_hamiltonian
from vqpe.operators import PauliTerm, QubitHamiltonian, spectral_decompose
from vqpe.qpe import (
    QpeResult,
    analytic_distribution,
    fourier_basis_check,
    fourier_states,
    inverse_qft,
    omega_grid,
    qft,
    run_qpe,
)
from vqpe.simulator import CircuitError, MeasurementBackend, StateVector, circuit_matrix
from vqpe.subspace import SubspaceError, TimeGrid


def _dft(n, sign):
    N = 1 << n
    return np.exp(sign * 2j * np.pi * np.outer(range(N), range(N)) / N) / math.sqrt(N)


def _phase_hamiltonian(E):
    """E |1><1| on one qubit."""
    return QubitHamiltonian(1, (PauliTerm(E / 2, ()), PauliTerm(-E / 2, ((0, "Z"),))))


def test_inverse_qft_single_qubit_is_hadamard():
    gates = [g for g in inverse_qft(1).gates]
    assert [g.name for g in gates] == ["H"]


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_qft_matches_dft(n):
    np.testing.assert_allclose(circuit_matrix(qft(n)), _dft(n, +1), atol=1e-12)
    np.testing.assert_allclose(circuit_matrix(inverse_qft(n)), _dft(n, -1), atol=1e-12)
    np.testing.assert_allclose(circuit_matrix(inverse_qft(n)) @ circuit_matrix(qft(n)), np.eye(1 << n), atol=1e-12)


def test_qft_offset_leaves_low_qubits_alone():
    M = circuit_matrix(inverse_qft(2, offset=1))
    np.testing.assert_allclose(M, np.kron(_dft(2, -1), np.eye(2)), atol=1e-12)


def test_point_mass_at_exact_phase():
    t = 0.8
    E = math.pi / t
    res = run_qpe(_phase_hamiltonian(E), StateVector.basis(1, 1), 2, t)
    k = res.mode
    assert res.probabilities[k] == pytest.approx(1, abs=1e-12)
    # omega_k = -E modulo 2 pi / t
    assert (res.omegas[k] + E) % (2 * math.pi / t) == pytest.approx(0, abs=1e-12)


@pytest.mark.parametrize("k_true", range(8))
def test_point_mass_every_outcome(k_true):
    t, n = 0.5, 3
    E = -2 * math.pi * k_true / ((1 << n) * t)
    res = run_qpe(_phase_hamiltonian(E), StateVector.basis(1, 1), n, t)
    assert res.probabilities[k_true] == pytest.approx(1, abs=1e-12)


def test_inexact_phase_mode_bound():
    t, n = 0.37, 4
    E = -1.2345
    res = run_qpe(_phase_hamiltonian(E), StateVector.basis(1, 1), n, t)
    nearest = round((-E * t * (1 << n) / (2 * math.pi))) % (1 << n)
    assert res.mode == nearest
    assert res.probabilities[res.mode] >= 4 / math.pi ** 2


def test_mixture_weights():
    t, n = 1.0, 3
    E1, E2 = 0.0, -2 * math.pi * 3 / (8 * t)
    H = QubitHamiltonian(1, (PauliTerm((E1 + E2) / 2, ()), PauliTerm((E1 - E2) / 2, ((0, "Z"),))))
    a, b = math.sqrt(0.3), math.sqrt(0.7)
    res = run_qpe(H, StateVector.from_array([a, b]), n, t)
    assert res.probabilities[0] == pytest.approx(0.3, abs=1e-12)
    assert res.probabilities[3] == pytest.approx(0.7, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_circuit_matches_analytic_distribution(seed, n):
    rng = np.random.default_rng(seed)
    H = random_hamiltonian(rng, 4, 8)
    v = rng.normal(size=16) + 1j * rng.normal(size=16)
    psi = StateVector.from_array(v, normalize=True)
    t = float(rng.uniform(0.1, 2))
    res = run_qpe(H, psi, n, t)
    np.testing.assert_allclose(res.probabilities, analytic_distribution(H, psi, n, t), atol=1e-8)


def test_shot_mode_is_seeded(dimer):
    psi = StateVector.basis(4, 3)
    b = MeasurementBackend("shots", 500, seed=3)
    r1, r2 = run_qpe(dimer, psi, 3, 0.4, b), run_qpe(dimer, psi, 3, 0.4, b)
    np.testing.assert_array_equal(r1.probabilities, r2.probabilities)
    assert np.all((r1.probabilities * 500) % 1 == 0)


def test_result_csv_and_invariants():
    res = run_qpe(_phase_hamiltonian(1.0), StateVector.basis(1, 1), 2, 0.5)
    lines = res.to_csv().splitlines()
    assert lines[0] == "k,omega_k,probability"
    assert len(lines) == 5
    np.testing.assert_allclose(res.omegas, omega_grid(2, 0.5))
    with pytest.raises(ValueError):
        QpeResult(1, 1.0, np.array([0.5, 0.4]), omega_grid(1, 1.0))


def test_size_and_argument_checks(dimer):
    with pytest.raises(CircuitError):
        run_qpe(dimer, StateVector.basis(4, 3), 0, 1.0)
    with pytest.raises(CircuitError):
        run_qpe(dimer, StateVector.basis(4, 3), 3, 1.0, max_qubits=6)
    with pytest.raises(CircuitError):
        qft(0)


def test_fourier_states_for_eigenstate(dimer):
    spec = spectral_decompose(dimer, StateVector.basis(4, 3))
    psi = StateVector.from_array(spec.eigenvectors[:, 0])
    E = spec.energies[0]
    N = 4
    # choose dt so that E (mod 2 pi / dt) lies exactly on the omega grid
    dt = 2 * math.pi / (N * abs(E))
    grid = TimeGrid(dt, N - 1)
    W = fourier_states(dimer, psi, grid)
    norms = np.sum(np.abs(W) ** 2, axis=0) / N
    k = int(round(E * N * dt / (2 * math.pi))) % N
    assert norms[k] == pytest.approx(1, abs=1e-10)
    assert np.delete(norms, k) == pytest.approx(0, abs=1e-10)


@pytest.mark.parametrize("nt", [1, 3, 7])
def test_fourier_basis_check(dimer, nt):
    assert fourier_basis_check(dimer, StateVector.basis(4, 3), TimeGrid(0.1, nt)) < 1e-10


def test_fourier_basis_check_needs_power_of_two(dimer):
    with pytest.raises(SubspaceError):
        fourier_basis_check(dimer, StateVector.basis(4, 3), TimeGrid(0.1, 2))

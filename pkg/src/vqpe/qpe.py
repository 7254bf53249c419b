"""Textbook quantum phase estimation used as a baseline for VQPE.

Register layout: the system occupies qubits ``0..n_sys-1`` and the ancillas sit
directly above it. Ancilla ``i`` (qubit ``n_sys + i``) controls
exp(-i H t 2^i), so it carries the ``i``-th least significant phase bit. The
controlled powers are exact spectral propagators.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .operators import DENSE_QUBIT_LIMIT, QubitHamiltonian, spectral_decompose
from .simulator import (
    EXACT,
    ExactPropagator,
    Circuit,
    CircuitError,
    Gate,
    MeasurementBackend,
    StateVector,
    apply_circuit,
    exact_propagator,
)
from .subspace import SubspaceError, TimeGrid, assemble_S, build_overlap_row

_QPE_KEY = 7


@dataclass(frozen=True)
class QpeResult:
    n_ancilla: int
    t: float
    probabilities: np.ndarray
    omegas: np.ndarray

    def __post_init__(self):
        if abs(float(np.sum(self.probabilities)) - 1) > 1e-10:
            raise ValueError("QPE probabilities do not sum to one")

    @property
    def mode(self) -> int:
        return int(np.argmax(self.probabilities))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "omega_k", "probability"])
        for k, (om, p) in enumerate(zip(self.omegas, self.probabilities)):
            w.writerow([k, repr(float(om)), repr(float(p))])
        return buf.getvalue()


def omega_grid(n_ancilla: int, t: float) -> np.ndarray:
    N = 1 << n_ancilla
    return 2 * math.pi * np.arange(N) / (N * t)


def _cphase(control: int, target: int, phi: float) -> list[Gate]:
    # diag(1, 1, 1, e^{i phi}) = RZ_c(phi/2) CRZ(phi) e^{i phi/4}
    return [Gate("RZ", (control,), phi / 2), Gate("CRZ", (control, target), phi),
            Gate("GPHASE", (), phi / 4)]


def _swap(a: int, b: int) -> list[Gate]:
    return [Gate("CNOT", (a, b)), Gate("CNOT", (b, a)), Gate("CNOT", (a, b))]


def qft(n: int, offset: int = 0) -> Circuit:
    """QFT on qubits offset..offset+n-1 (lowest wire = least significant bit):
    |x> -> 2^{-n/2} sum_k exp(2 pi i x k / 2^n) |k>."""
    if n < 1:
        raise CircuitError("QFT needs at least one qubit")
    w = [offset + i for i in range(n)]
    gates: list[Gate] = []
    for j in range(n - 1, -1, -1):
        gates.append(Gate("H", (w[j],)))
        for m in range(j - 1, -1, -1):
            gates.extend(_cphase(w[m], w[j], math.pi / (1 << (j - m))))
    for i in range(n // 2):
        gates.extend(_swap(w[i], w[n - 1 - i]))
    return Circuit(offset + n, tuple(gates))


def inverse_qft(n: int, offset: int = 0) -> Circuit:
    """Matrix entries 2^{-n/2} exp(-2 pi i j k / 2^n), final swaps included."""
    return qft(n, offset).inverse()


def qpe_state(H: QubitHamiltonian, psi: StateVector, n_ancilla: int, t: float,
              max_qubits: int = DENSE_QUBIT_LIMIT) -> np.ndarray:
    """Full register state after Hadamards, controlled powers and the inverse QFT."""
    if n_ancilla < 1:
        raise CircuitError("need at least one ancilla")
    n_sys = psi.n_qubits
    if H.n_qubits != n_sys:
        raise CircuitError("Hamiltonian and state live on different registers")
    total = n_sys + n_ancilla
    if total > max_qubits:
        raise CircuitError(f"{total} qubits exceed the simulation limit {max_qubits}")
    N = 1 << n_ancilla
    vec = np.zeros((N, 1 << n_sys), dtype=complex)
    vec[0] = psi.amplitudes
    hads = Circuit(total, tuple(Gate("H", (n_sys + i,)) for i in range(n_ancilla)))
    vec = apply_circuit(hads, vec.reshape(-1)).amplitudes.reshape(N, -1).copy()
    step = exact_propagator(H, t, max_qubits)
    power = step
    for i in range(n_ancilla):
        on = (np.arange(N) >> i) & 1 == 1
        vec[on] = vec[on] @ power.T
        power = power @ power
    return apply_circuit(inverse_qft(n_ancilla, n_sys), vec.reshape(-1)).amplitudes


def run_qpe(H: QubitHamiltonian, psi: StateVector, n_ancilla: int, t: float,
            backend: MeasurementBackend = EXACT, max_qubits: int = DENSE_QUBIT_LIMIT) -> QpeResult:
    """Ancilla outcome distribution. For an eigenstate of energy E the peak sits
    at k = -2^n t E / 2 pi (mod 2^n), i.e. omega_k = -E modulo 2 pi / t."""
    state = qpe_state(H, psi, n_ancilla, t, max_qubits).reshape(1 << n_ancilla, -1)
    probs = np.sum(np.abs(state) ** 2, axis=1)
    probs = probs / probs.sum()
    if not backend.exact:
        counts = backend.rng(_QPE_KEY).multinomial(backend.shots, probs)
        probs = counts / backend.shots
    return QpeResult(n_ancilla, t, probs, omega_grid(n_ancilla, t))


def analytic_distribution(H: QubitHamiltonian, psi: StateVector, n_ancilla: int, t: float,
                          max_qubits: int = DENSE_QUBIT_LIMIT) -> np.ndarray:
    """Weighted sum of Dirichlet-kernel profiles over the eigencomponents of psi."""
    spec = spectral_decompose(H, psi, max_qubits)
    N = 1 << n_ancilla
    k = np.arange(N)
    j = np.arange(N)
    out = np.zeros(N)
    for E, w in zip(spec.energies, spec.weights()):
        if w == 0:
            continue
        amp = np.exp(-1j * np.outer(E * t + 2 * math.pi * k / N, j)).sum(axis=1) / N
        out += w * np.abs(amp) ** 2
    return out


def fourier_states(H: QubitHamiltonian, psi: StateVector, grid: TimeGrid) -> np.ndarray:
    """Columns |omega_k> = (N_T+1)^{-1/2} sum_j exp(i omega_k t_j) |phi_j>,
    omega_k = 2 pi k / ((N_T+1) dt)."""
    N = grid.nt + 1
    step = exact_propagator(H, grid.dt)
    phis = np.empty((psi.amplitudes.size, N), dtype=complex)
    phis[:, 0] = psi.amplitudes
    for j in range(1, N):
        phis[:, j] = step @ phis[:, j - 1]
    F = np.exp(1j * np.outer(grid.times, omega_grid_for(grid)))
    return phis @ F / math.sqrt(N)


def omega_grid_for(grid: TimeGrid) -> np.ndarray:
    N = grid.nt + 1
    return 2 * math.pi * np.arange(N) / (N * grid.dt)


def fourier_basis_check(H: QubitHamiltonian, psi: StateVector, grid: TimeGrid) -> float:
    """Largest deviation between the statevector Gram matrix of the Fourier
    states and the two structures it must reproduce.

    * G = F^dagger S F with F the unitary DFT over the time grid and S the
      Toeplitz overlap matrix of the plain time-evolved basis.
    * diag(G) / (N_T+1) at index k equals the QPE probability of outcome
      -k mod 2^n for t = dt, because the system part of the QPE state after the
      inverse QFT is |omega_{-k}> / sqrt(N_T+1).
    """
    N = grid.nt + 1
    n = N.bit_length() - 1
    if N < 2 or (1 << n) != N:
        raise SubspaceError(f"N_T + 1 = {N} is not a power of two")
    W = fourier_states(H, psi, grid)
    G = W.conj().T @ W
    row = build_overlap_row(ExactPropagator(H, grid.dt), psi, grid)
    S = assemble_S(row, grid.nt)
    F = np.exp(1j * np.outer(grid.times, omega_grid_for(grid))) / math.sqrt(N)
    dev_gram = np.abs(G - F.conj().T @ S @ F).max()
    qpe = run_qpe(H, psi, n, grid.dt).probabilities
    dev_qpe = np.abs(np.diag(G).real / N - qpe[(-np.arange(N)) % N]).max()
    return float(max(dev_gram, dev_qpe))

"""Variational quantum phase estimation over Krylov bases of time-evolved states."""

from .operators import (
    FermionTerm,
    HamiltonianError,
    PauliParseError,
    PauliTerm,
    QubitHamiltonian,
    SpectralDecomposition,
    dense_matrix,
    hubbard_model,
    jordan_wigner,
    load_pauli_sum,
    parse_pauli_sum,
    serialize_pauli_sum,
    spectral_decompose,
)
from .qpe import QpeResult, analytic_distribution, fourier_basis_check, inverse_qft, run_qpe
from .simulator import (
    Circuit,
    ExactPropagator,
    Gate,
    MeasurementBackend,
    StateVector,
    TrotterPropagator,
    hadamard_test,
    hadamard_test_weighted,
    hartree_fock_state,
    pauli_gadget,
    trotter_step,
)
from .subspace import (
    EigenSolution,
    SubspaceMatrices,
    TimeGrid,
    bootstrap_ground_std,
    build_matrices,
    solve_hamiltonian,
    solve_unitary,
)
from .vff import FitConfig, VffModel, VffPropagator, fit_vff, vff_propagator

__all__ = [name for name in dir() if not name.startswith("_")]

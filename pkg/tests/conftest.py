from __future__ import annotations

from functools import reduce
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from vqpe.operators import PauliTerm, QubitHamiltonian, hubbard_model

DATA = Path(__file__).parent / "data"

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

DIMER_GROUND = (0.5 - np.sqrt(0.25 + 16)) / 2


def kron_word(word, n):
    """Naive Kronecker-product oracle; qubit 0 is the rightmost factor."""
    letters = dict(word)
    return reduce(np.kron, [PAULI[letters.get(q, "I")] for q in reversed(range(n))])


def kron_matrix(H: QubitHamiltonian) -> np.ndarray:
    dim = 1 << H.n_qubits
    out = np.zeros((dim, dim), dtype=complex)
    for t in H.terms:
        out += t.coefficient.real * kron_word(t.word, H.n_qubits)
    return out


def random_hamiltonian(rng: np.random.Generator, n: int, n_terms: int) -> QubitHamiltonian:
    terms = [PauliTerm(rng.normal(), ())]
    for _ in range(n_terms):
        letters = rng.choice(list("IXYZ"), size=n)
        word = tuple((q, c) for q, c in enumerate(letters) if c != "I")
        terms.append(PauliTerm(rng.normal(), word))
    return QubitHamiltonian(n, tuple(terms))


@st.composite
def hamiltonians(draw, min_qubits=1, max_qubits=4, max_terms=8):
    n = draw(st.integers(min_qubits, max_qubits))
    k = draw(st.integers(1, max_terms))
    terms = []
    for _ in range(k):
        letters = draw(st.lists(st.sampled_from("IXYZ"), min_size=n, max_size=n))
        coeff = draw(st.floats(-2, 2, allow_nan=False, allow_infinity=False))
        terms.append(PauliTerm(coeff, tuple((q, c) for q, c in enumerate(letters) if c != "I")))
    return QubitHamiltonian(n, tuple(terms))


@pytest.fixture(scope="session")
def dimer() -> QubitHamiltonian:
    return hubbard_model(2, 1.0, 0.5)


@pytest.fixture(scope="session")
def h2_path() -> Path:
    return DATA / "h2_sto3g_1p5.txt"


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

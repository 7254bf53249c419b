"""Pauli-string algebra, Jordan-Wigner mapping and qubit Hamiltonians.

Conventions used throughout the package:

* qubit 0 is the least significant bit of a computational-basis index;
* spin-orbital ``i`` maps onto qubit ``i``;
* a Pauli word is a tuple of ``(qubit, letter)`` pairs, strictly increasing in
  qubit index, with identity factors omitted.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

PRUNE_TOL = 1e-12
HERMITIAN_TOL = 1e-12
DENSE_QUBIT_LIMIT = 14

Word = tuple[tuple[int, str], ...]

# single-qubit products: (a, b) -> (phase, letter) with a*b = phase * letter
_PRODUCT = {
    ("X", "X"): (1, ""), ("Y", "Y"): (1, ""), ("Z", "Z"): (1, ""),
    ("X", "Y"): (1j, "Z"), ("Y", "X"): (-1j, "Z"),
    ("Y", "Z"): (1j, "X"), ("Z", "Y"): (-1j, "X"),
    ("Z", "X"): (1j, "Y"), ("X", "Z"): (-1j, "Y"),
}


class HamiltonianError(ValueError):
    """Raised for malformed, non-Hermitian or oversized operators."""


class PauliParseError(HamiltonianError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def make_word(factors: Mapping[int, str] | Iterable[tuple[int, str]]) -> Word:
    items = factors.items() if isinstance(factors, Mapping) else factors
    out: dict[int, str] = {}
    for q, letter in items:
        q = int(q)
        letter = letter.upper()
        if q < 0:
            raise HamiltonianError(f"negative qubit index {q}")
        if letter == "I":
            continue
        if letter not in "XYZ":
            raise HamiltonianError(f"invalid Pauli letter {letter!r}")
        if q in out:
            raise HamiltonianError(f"qubit {q} appears twice in word")
        out[q] = letter
    return tuple(sorted(out.items()))


def word_to_str(word: Word) -> str:
    return " ".join(f"{p}{q}" for q, p in word) if word else "I"


def word_sort_key(word: Word) -> tuple:
    """Canonical lexicographic order: compare factor-by-factor as (qubit, letter)."""
    return tuple(word)


def multiply_words(a: Word, b: Word) -> tuple[complex, Word]:
    phase: complex = 1
    merged = dict(a)
    for q, p in b:
        if q in merged:
            ph, letter = _PRODUCT[(merged[q], p)]
            phase *= ph
            if letter:
                merged[q] = letter
            else:
                del merged[q]
        else:
            merged[q] = p
    return phase, tuple(sorted(merged.items()))


def word_masks(word: Word) -> tuple[int, int, int]:
    """Return ``(x_mask, z_mask, n_y)`` so that P = i^n_y X^x_mask Z^z_mask."""
    x_mask = z_mask = n_y = 0
    for q, p in word:
        if p in "XY":
            x_mask |= 1 << q
        if p in "YZ":
            z_mask |= 1 << q
        if p == "Y":
            n_y += 1
    return x_mask, z_mask, n_y


def apply_word(word: Word, vec: np.ndarray) -> np.ndarray:
    """Apply a Pauli word to a state vector (qubit 0 = least significant bit)."""
    x_mask, z_mask, n_y = word_masks(word)
    idx = np.arange(vec.shape[0])
    signs = 1 - 2 * (np.bitwise_count(idx & z_mask).astype(np.int64) & 1)
    scaled = (1j ** n_y) * signs * vec
    return scaled[idx ^ x_mask]


@dataclass(frozen=True)
class PauliTerm:
    coefficient: complex
    word: Word = ()

    @classmethod
    def from_factors(cls, coefficient: complex, factors) -> "PauliTerm":
        return cls(complex(coefficient), make_word(factors))

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(q for q, _ in self.word)

    def __str__(self) -> str:
        return f"{self.coefficient} {word_to_str(self.word)}"


def combine_terms(terms: Iterable[PauliTerm]) -> dict[Word, complex]:
    acc: dict[Word, complex] = {}
    for t in terms:
        acc[t.word] = acc.get(t.word, 0) + complex(t.coefficient)
    return {w: c for w, c in acc.items() if abs(c) > PRUNE_TOL}


@dataclass(frozen=True)
class QubitHamiltonian:
    """Hermitian sum of weighted Pauli words on ``n_qubits`` qubits.

    Duplicate words are combined on construction, coefficients below
    ``PRUNE_TOL`` dropped and the result sorted in canonical word order.
    A residual imaginary part above ``HERMITIAN_TOL`` raises.
    """

    n_qubits: int
    terms: tuple[PauliTerm, ...] = field(default=())

    def __post_init__(self):
        combined = combine_terms(self.terms)
        normalized = []
        for w in sorted(combined, key=word_sort_key):
            c = combined[w]
            if abs(c.imag) > HERMITIAN_TOL:
                raise HamiltonianError(
                    f"non-Hermitian coefficient {c} on {word_to_str(w)}"
                )
            if w and w[-1][0] >= self.n_qubits:
                raise HamiltonianError(
                    f"term {word_to_str(w)} exceeds {self.n_qubits} qubits"
                )
            normalized.append(PauliTerm(complex(c.real, 0.0), w))
        object.__setattr__(self, "terms", tuple(normalized))

    @classmethod
    def from_dict(cls, n_qubits: int, coeffs: Mapping[str, complex]) -> "QubitHamiltonian":
        """Build from ``{"X0 Z1": 0.5, "": -1.0}``-style mappings."""
        terms = []
        for text, c in coeffs.items():
            terms.append(PauliTerm(complex(c), _parse_factors(text.split(), 0)))
        return cls(n_qubits, tuple(terms))

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def constant(self) -> float:
        for t in self.terms:
            if not t.word:
                return t.coefficient.real
        return 0.0

    @property
    def non_identity_terms(self) -> tuple[PauliTerm, ...]:
        return tuple(t for t in self.terms if t.word)

    def coefficients(self) -> dict[Word, float]:
        return {t.word: t.coefficient.real for t in self.terms}

    def apply(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros_like(vec, dtype=complex)
        for t in self.terms:
            out += t.coefficient.real * apply_word(t.word, vec)
        return out

    def expectation(self, vec: np.ndarray) -> float:
        return float(np.vdot(vec, self.apply(vec)).real)

    def serialize(self) -> str:
        return serialize_pauli_sum(self)


# ---------------------------------------------------------------------------
# Jordan-Wigner


@dataclass(frozen=True)
class FermionTerm:
    """``coefficient * a†_p a_q`` (one-body) or ``coefficient * a†_p a†_q a_r a_s``.

    Two-body indices are stored in operator order, i.e. physicist notation
    as written; no permutational symmetry is assumed.
    """

    indices: tuple[int, ...]
    coefficient: float

    def __post_init__(self):
        if len(self.indices) not in (2, 4):
            raise HamiltonianError("fermion term needs 2 or 4 indices")
        if any(i < 0 for i in self.indices):
            raise HamiltonianError("negative spin-orbital index")

    @property
    def kind(self) -> str:
        return "one-body" if len(self.indices) == 2 else "two-body"

    @classmethod
    def one_body(cls, p: int, q: int, coefficient: float) -> "FermionTerm":
        return cls((p, q), coefficient)

    @classmethod
    def two_body(cls, p: int, q: int, r: int, s: int, coefficient: float) -> "FermionTerm":
        return cls((p, q, r, s), coefficient)


def _ladder(j: int, dagger: bool) -> dict[Word, complex]:
    z_string = tuple((i, "Z") for i in range(j))
    sign = -0.5j if dagger else 0.5j
    return {z_string + ((j, "X"),): 0.5, z_string + ((j, "Y"),): sign}


def _multiply_sums(a: Mapping[Word, complex], b: Mapping[Word, complex]) -> dict[Word, complex]:
    out: dict[Word, complex] = {}
    for wa, ca in a.items():
        for wb, cb in b.items():
            phase, w = multiply_words(wa, wb)
            out[w] = out.get(w, 0) + phase * ca * cb
    return out


def jordan_wigner(terms: Sequence[FermionTerm], n_spin_orbitals: int) -> QubitHamiltonian:
    """Map a Hermitian list of fermionic terms to a qubit Hamiltonian.

    Uses a†_j = Z_0...Z_{j-1} (X_j - iY_j)/2 and a_j = Z_0...Z_{j-1} (X_j + iY_j)/2.
    """
    total: dict[Word, complex] = {}
    for term in terms:
        if any(i >= n_spin_orbitals for i in term.indices):
            raise HamiltonianError(
                f"index in {term.indices} out of range for {n_spin_orbitals} spin-orbitals"
            )
        n_create = len(term.indices) // 2
        product: dict[Word, complex] = {(): complex(term.coefficient)}
        for pos, j in enumerate(term.indices):
            product = _multiply_sums(product, _ladder(j, dagger=pos < n_create))
        for w, c in product.items():
            total[w] = total.get(w, 0) + c
    return QubitHamiltonian(
        n_spin_orbitals, tuple(PauliTerm(c, w) for w, c in total.items())
    )


def hubbard_model(n_sites: int, t: float, U: float) -> QubitHamiltonian:
    """Open-chain Fermi-Hubbard model on ``2 * n_sites`` qubits.

    Spin-orbitals are interleaved: qubit ``2i`` is site ``i`` spin up and
    qubit ``2i + 1`` is site ``i`` spin down.
    """
    if n_sites < 1:
        raise HamiltonianError("hubbard_model needs at least one site")
    terms = []
    for i in range(n_sites - 1):
        for spin in (0, 1):
            a, b = 2 * i + spin, 2 * (i + 1) + spin
            terms.append(FermionTerm.one_body(a, b, -t))
            terms.append(FermionTerm.one_body(b, a, -t))
    for i in range(n_sites):
        up, down = 2 * i, 2 * i + 1
        # n_up n_down = a†_up a†_down a_down a_up
        terms.append(FermionTerm.two_body(up, down, down, up, U))
    return jordan_wigner(terms, 2 * n_sites)


# ---------------------------------------------------------------------------
# dense oracle


def dense_matrix(H: QubitHamiltonian, max_qubits: int = DENSE_QUBIT_LIMIT) -> np.ndarray:
    n = H.n_qubits
    if n > max_qubits:
        raise HamiltonianError(f"{n} qubits exceeds dense limit of {max_qubits}")
    dim = 1 << n
    idx = np.arange(dim)
    out = np.zeros((dim, dim), dtype=complex)
    for t in H.terms:
        x_mask, z_mask, n_y = word_masks(t.word)
        signs = 1 - 2 * (np.bitwise_count(idx & z_mask).astype(np.int64) & 1)
        # column b maps to row b ^ x_mask
        out[idx ^ x_mask, idx] += t.coefficient.real * (1j ** n_y) * signs
    return out


def word_matrix(word: Word, n_qubits: int) -> np.ndarray:
    return dense_matrix(QubitHamiltonian(n_qubits, (PauliTerm(1.0, word),)))


@dataclass(frozen=True)
class SpectralDecomposition:
    energies: np.ndarray
    eigenvectors: np.ndarray
    amplitudes: np.ndarray

    def weights(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def support(self, cutoff: float = 1e-12) -> np.ndarray:
        """Indices of eigenstates with |phi_N|^2 above ``cutoff``."""
        return np.flatnonzero(self.weights() > cutoff)

    def support_dimension(self, cutoff: float = 1e-12) -> int:
        return int(self.support(cutoff).size)

    def ground_energy(self, cutoff: float | None = None) -> float:
        if cutoff is None:
            return float(self.energies[0])
        return float(self.energies[self.support(cutoff)].min())


def spectral_decompose(H: QubitHamiltonian, reference, max_qubits: int = DENSE_QUBIT_LIMIT) -> SpectralDecomposition:
    vec = getattr(reference, "amplitudes", reference)
    mat = dense_matrix(H, max_qubits)
    if vec.shape[0] != mat.shape[0]:
        raise HamiltonianError("reference state does not match Hamiltonian register")
    energies, vecs = np.linalg.eigh(mat)
    return SpectralDecomposition(energies, vecs, vecs.conj().T @ vec)


# ---------------------------------------------------------------------------
# text format

_FACTOR = re.compile(r"^([A-Za-z])(\d+)$")
_COMPLEX = re.compile(r"^\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\)$")


def _parse_factors(tokens: Sequence[str], line_no: int) -> Word:
    factors = []
    for tok in tokens:
        m = _FACTOR.match(tok)
        if not m or m.group(1).upper() not in "XYZ":
            raise PauliParseError(line_no, f"invalid Pauli factor {tok!r}")
        factors.append((int(m.group(2)), m.group(1).upper()))
    try:
        return make_word(factors)
    except HamiltonianError as exc:
        raise PauliParseError(line_no, str(exc)) from None


def _parse_coefficient(token: str, line_no: int) -> complex:
    m = _COMPLEX.match(token)
    try:
        if m:
            return complex(float(m.group(1)), float(m.group(2)))
        return complex(float(token))
    except ValueError:
        raise PauliParseError(line_no, f"invalid coefficient {token!r}") from None


def parse_pauli_sum(text: str) -> QubitHamiltonian:
    """Parse the line-oriented Pauli-sum format.

    Each line holds a coefficient (``0.5`` or ``(0.5,0.0)``) followed by factors
    such as ``X0 Z1``. An optional ``qubits: N`` header fixes the register size;
    ``#`` starts a comment.
    """
    declared: int | None = None
    terms = []
    max_index = -1
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower().startswith("qubits:"):
            if declared is not None or terms:
                raise PauliParseError(line_no, "qubits header must come first")
            try:
                declared = int(line.split(":", 1)[1])
            except ValueError:
                raise PauliParseError(line_no, "invalid qubit count") from None
            continue
        # allow "(re, im)" with a space after the comma
        m = re.match(r"^(\([^)]*\)|\S+)\s*(.*)$", line)
        coeff = _parse_coefficient(m.group(1).replace(" ", ""), line_no)
        word = _parse_factors(m.group(2).split(), line_no)
        if word:
            top = word[-1][0]
            if declared is not None and top >= declared:
                raise PauliParseError(line_no, f"qubit {top} exceeds declared {declared}")
            max_index = max(max_index, top)
        terms.append(PauliTerm(coeff, word))
    n_qubits = declared if declared is not None else max(max_index + 1, 1)
    try:
        return QubitHamiltonian(n_qubits, tuple(terms))
    except HamiltonianError as exc:
        raise HamiltonianError(f"parsed operator rejected: {exc}") from None


def serialize_pauli_sum(H: QubitHamiltonian) -> str:
    lines = [f"qubits: {H.n_qubits}"]
    for t in H.terms:
        factors = " ".join(f"{p}{q}" for q, p in t.word)
        lines.append(f"{t.coefficient.real!r} {factors}".rstrip())
    return "\n".join(lines) + "\n"


def load_pauli_sum(path) -> QubitHamiltonian:
    with open(path, encoding="utf-8") as fh:
        return parse_pauli_sum(fh.read())

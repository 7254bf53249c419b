"""Statevector engine: gates, Pauli gadgets, Trotter circuits and Hadamard tests.

Circuits are plain gate lists. Every gate carries a ``frame`` flag: frame gates
(basis changes, CNOT ladders, the whole of a fast-forwarding ``W`` block) are
left untouched when a circuit is turned into its controlled version, while
non-frame gates (central ``RZ`` rotations, global phases, bare ``X``) receive the
control. The frame gates of any controllable circuit multiply to the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Protocol, Sequence

import numpy as np

from .operators import (
    DENSE_QUBIT_LIMIT,
    HamiltonianError,
    QubitHamiltonian,
    Word,
    apply_word,
    dense_matrix,
    word_sort_key,
)

NORM_TOL = 1e-10

_ONE_QUBIT = {"H", "X", "RX", "RZ"}
_TWO_QUBIT = {"CNOT", "CRZ"}


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    name: str
    wires: tuple[int, ...]
    angle: float | None = None
    frame: bool = False

    def inverse(self) -> "Gate":
        if self.angle is None:
            return self
        return replace(self, angle=-self.angle)

    def dump(self) -> str:
        parts = [self.name, *map(str, self.wires)]
        if self.angle is not None:
            parts.append(f"{self.angle:.17g}")
        return " ".join(parts)


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple[Gate, ...] = field(default=())

    def __post_init__(self):
        for g in self.gates:
            if any(w < 0 or w >= self.n_qubits for w in g.wires):
                raise CircuitError(f"{g.name} on wires {g.wires} outside {self.n_qubits} qubits")
            if len(set(g.wires)) != len(g.wires):
                raise CircuitError(f"{g.name} repeats a wire")
            if g.angle is not None and not math.isfinite(g.angle):
                raise CircuitError(f"non-finite angle on {g.name}")

    def __add__(self, other: "Circuit") -> "Circuit":
        n = max(self.n_qubits, other.n_qubits)
        return Circuit(n, self.gates + other.gates)

    def __len__(self) -> int:
        return len(self.gates)

    def widen(self, n_qubits: int) -> "Circuit":
        return Circuit(n_qubits, self.gates)

    def inverse(self) -> "Circuit":
        return Circuit(self.n_qubits, tuple(g.inverse() for g in reversed(self.gates)))

    def power(self, k: int) -> "Circuit":
        if k < 0:
            return self.inverse().power(-k)
        return Circuit(self.n_qubits, self.gates * k)

    def as_frame(self) -> "Circuit":
        return Circuit(self.n_qubits, tuple(replace(g, frame=True) for g in self.gates))

    def controlled(self, ancilla: int) -> "Circuit":
        """Controlled version on a register widened to include ``ancilla``."""
        n = max(self.n_qubits, ancilla + 1)
        gates: list[Gate] = []
        for g in self.gates:
            if ancilla in g.wires:
                raise CircuitError(f"ancilla {ancilla} collides with {g.name} {g.wires}")
            if g.frame:
                gates.append(g)
            elif g.name == "RZ":
                gates.append(Gate("CRZ", (ancilla, g.wires[0]), g.angle))
            elif g.name == "X":
                gates.append(Gate("CNOT", (ancilla, g.wires[0])))
            elif g.name == "GPHASE":
                gates.extend(controlled_phase(ancilla, g.angle))
            else:
                raise CircuitError(f"no controlled form for non-frame {g.name}")
        return Circuit(n, tuple(gates))

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for g in self.gates:
            out[g.name] = out.get(g.name, 0) + 1
        return out

    def gate_count(self) -> int:
        """Number of gates, global phases excluded."""
        return sum(1 for g in self.gates if g.name != "GPHASE")

    def cnot_count(self) -> int:
        """CNOTs after lowering each controlled-RZ to two CNOTs."""
        c = self.counts()
        return c.get("CNOT", 0) + 2 * c.get("CRZ", 0)

    def dump(self) -> str:
        return "\n".join(g.dump() for g in self.gates) + ("\n" if self.gates else "")


def controlled_phase(control: int, angle: float) -> list[Gate]:
    """diag(1, e^{i angle}) on ``control`` as RZ(angle) times a global phase."""
    return [Gate("RZ", (control,), angle), Gate("GPHASE", (), angle / 2)]


# ---------------------------------------------------------------------------
# state vectors


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (1 << self.n_qubits,):
            raise CircuitError("amplitude array does not match qubit count")
        if abs(np.linalg.norm(amps) - 1) > NORM_TOL:
            raise CircuitError("state vector is not normalized")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> "StateVector":
        if not 0 <= index < (1 << n_qubits):
            raise CircuitError(f"basis index {index} out of range")
        amps = np.zeros(1 << n_qubits, dtype=complex)
        amps[index] = 1
        return cls(n_qubits, amps)

    @classmethod
    def from_array(cls, amps, normalize: bool = False) -> "StateVector":
        amps = np.asarray(amps, dtype=complex)
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(int(round(math.log2(amps.shape[0]))), amps)

    def inner(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


def hartree_fock_state(n_qubits: int, n_electrons: int) -> StateVector:
    if not 0 <= n_electrons <= n_qubits:
        raise CircuitError(f"{n_electrons} electrons do not fit in {n_qubits} qubits")
    return StateVector.basis(n_qubits, (1 << n_electrons) - 1)


# ---------------------------------------------------------------------------
# gate application

_HAD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)


def _rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def _rz_diag(theta: float) -> np.ndarray:
    return np.array([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def _view(vec: np.ndarray, n: int, q: int) -> np.ndarray:
    return vec.reshape(1 << (n - q - 1), 2, 1 << q)


def _apply_1q(vec: np.ndarray, n: int, q: int, mat: np.ndarray) -> np.ndarray:
    v = _view(vec, n, q)
    return np.einsum("ab,ibj->iaj", mat, v).reshape(-1)


def _apply_gate(vec: np.ndarray, n: int, g: Gate) -> np.ndarray:
    name = g.name
    if name == "GPHASE":
        return vec * np.exp(1j * g.angle)
    if name == "H":
        return _apply_1q(vec, n, g.wires[0], _HAD)
    if name == "X":
        return _apply_1q(vec, n, g.wires[0], _X)
    if name == "RX":
        return _apply_1q(vec, n, g.wires[0], _rx(g.angle))
    idx = np.arange(vec.shape[0])
    if name == "RZ":
        q = g.wires[0]
        bits = (idx >> q) & 1
        return vec * _rz_diag(g.angle)[bits]
    if name == "CNOT":
        c, t = g.wires
        flip = ((idx >> c) & 1) << t
        return vec[idx ^ flip]
    if name == "CRZ":
        c, t = g.wires
        ctrl = ((idx >> c) & 1).astype(bool)
        phases = np.where(ctrl, _rz_diag(g.angle)[(idx >> t) & 1], 1.0)
        return vec * phases
    raise CircuitError(f"unknown gate {name}")


def apply_circuit(c: Circuit, psi: StateVector | np.ndarray) -> StateVector:
    vec = np.asarray(getattr(psi, "amplitudes", psi), dtype=complex)
    n = c.n_qubits
    if vec.shape[0] != 1 << n:
        raise CircuitError(f"circuit on {n} qubits applied to {vec.shape[0]}-dim state")
    for g in c.gates:
        vec = _apply_gate(vec, n, g)
    return StateVector(n, vec)


def circuit_matrix(c: Circuit) -> np.ndarray:
    dim = 1 << c.n_qubits
    cols = np.eye(dim, dtype=complex)
    out = np.empty_like(cols)
    for b in range(dim):
        vec = cols[:, b]
        for g in c.gates:
            vec = _apply_gate(vec, c.n_qubits, g)
        out[:, b] = vec
    return out


# ---------------------------------------------------------------------------
# gadgets and Trotterisation


def pauli_gadget(word: Word, theta: float, n_qubits: int | None = None) -> Circuit:
    """exp(-i theta/2 P): basis change, CNOT ladder, RZ(theta), mirror.

    The ladder runs from the highest qubit of the word down to the lowest, which
    carries the central rotation. Y factors use RX(pi/2) before and RX(-pi/2)
    after; X factors use H.
    """
    if not word:
        raise CircuitError("pauli_gadget needs a non-empty word")
    n = n_qubits if n_qubits is not None else word[-1][0] + 1
    basis: list[Gate] = []
    for q, p in word:
        if p == "X":
            basis.append(Gate("H", (q,), frame=True))
        elif p == "Y":
            basis.append(Gate("RX", (q,), math.pi / 2, frame=True))
    unbasis = [g if g.name == "H" else g.inverse() for g in basis]
    qubits = [q for q, _ in word]
    ladder = [Gate("CNOT", (qubits[i], qubits[i - 1]), frame=True) for i in range(len(qubits) - 1, 0, -1)]
    centre = Gate("RZ", (qubits[0],), float(theta))
    gates = basis + ladder + [centre] + ladder[::-1] + unbasis
    return Circuit(n, tuple(gates))


def controlled_gadget(word: Word, theta: float, ancilla: int, n_qubits: int | None = None) -> Circuit:
    if any(q == ancilla for q, _ in word):
        raise CircuitError(f"ancilla {ancilla} lies in the support of the word")
    return pauli_gadget(word, theta, n_qubits).controlled(ancilla)


def trotter_step(H: QubitHamiltonian, dt: float) -> Circuit:
    """First-order product exp(-i h_k P_k dt) over terms in canonical word order.

    The identity component becomes a global-phase gate so the step matches
    exp(-iH dt) exactly for commuting Hamiltonians.
    """
    if not math.isfinite(dt):
        raise CircuitError("time step must be finite")
    gates: list[Gate] = []
    for term in sorted(H.terms, key=lambda t: word_sort_key(t.word)):
        h = term.coefficient.real
        if not term.word:
            gates.append(Gate("GPHASE", (), -h * dt))
        else:
            gates.extend(pauli_gadget(term.word, 2 * h * dt, H.n_qubits).gates)
    return Circuit(H.n_qubits, tuple(gates))


def exact_evolve(H: QubitHamiltonian, t: float, psi: StateVector, max_qubits: int = DENSE_QUBIT_LIMIT) -> StateVector:
    return StateVector(psi.n_qubits, exact_propagator(H, t, max_qubits) @ psi.amplitudes)


def exact_propagator(H: QubitHamiltonian, t: float, max_qubits: int = DENSE_QUBIT_LIMIT) -> np.ndarray:
    energies, vecs = np.linalg.eigh(dense_matrix(H, max_qubits))
    return (vecs * np.exp(-1j * energies * t)) @ vecs.conj().T


# ---------------------------------------------------------------------------
# propagators: objects yielding the block for U^m


class Propagator(Protocol):
    n_qubits: int

    def power(self, m: int) -> Circuit | np.ndarray: ...


class ExactPropagator:
    """Spectral propagator; ``power(m)`` returns the dense matrix exp(-iH m dt)."""

    def __init__(self, H: QubitHamiltonian, dt: float, max_qubits: int = DENSE_QUBIT_LIMIT):
        self.n_qubits = H.n_qubits
        self.dt = dt
        self._energies, self._vecs = np.linalg.eigh(dense_matrix(H, max_qubits))

    def power(self, m: int) -> np.ndarray:
        return (self._vecs * np.exp(-1j * self._energies * m * self.dt)) @ self._vecs.conj().T


class TrotterPropagator:
    def __init__(self, H: QubitHamiltonian, dt: float):
        self.n_qubits = H.n_qubits
        self.dt = dt
        self.step = trotter_step(H, dt)

    def power(self, m: int) -> Circuit:
        return self.step.power(m)


# ---------------------------------------------------------------------------
# measurement


@dataclass(frozen=True)
class MeasurementBackend:
    """Exact expectation values or Bernoulli shot sampling.

    Every matrix element draws from its own stream derived from ``seed`` and an
    integer key, so results do not depend on evaluation order.
    """

    mode: str = "exact"
    shots: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "shots"):
            raise ValueError(f"unknown backend mode {self.mode!r}")
        if self.mode == "shots" and self.shots < 1:
            raise ValueError("shot mode needs at least one shot")

    @property
    def exact(self) -> bool:
        return self.mode == "exact"

    def rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key)))

    def sample_pm(self, value: float, shots: int, rng: np.random.Generator) -> float:
        """Mean of ``shots`` +/-1 outcomes whose expectation is ``value``."""
        p_plus = min(max((1 + value) / 2, 0.0), 1.0)
        n_plus = rng.binomial(shots, p_plus)
        return (2 * n_plus - shots) / shots


EXACT = MeasurementBackend()

Block = Circuit | np.ndarray | None


def _apply_controlled(block: Block, vec: np.ndarray, n_sys: int) -> np.ndarray:
    """Apply ``block`` to the system register when the top qubit (ancilla) is 1."""
    if block is None:
        return vec
    if isinstance(block, Circuit):
        if block.n_qubits > n_sys:
            raise CircuitError("block acts outside the system register")
        ctrl = block.widen(n_sys).controlled(n_sys)
        return apply_circuit(ctrl, vec).amplitudes
    if block.shape != (1 << n_sys, 1 << n_sys):
        raise CircuitError("dense block does not match system register")
    half = 1 << n_sys
    out = vec.copy()
    out[half:] = block @ vec[half:]
    return out


def hadamard_state(build_j: Block, build_k: Block, phi0: StateVector) -> np.ndarray:
    """Register state after H, c-B_j, X, c-B_k, X, H with the ancilla on top.

    The ancilla is qubit ``n`` (most significant); on return the |0> half holds
    (B_k + B_j)|phi0>/2 and the |1> half holds (B_k - B_j)|phi0>/2.
    """
    n = phi0.n_qubits
    vec = np.concatenate([phi0.amplitudes, np.zeros_like(phi0.amplitudes)])
    anc = Circuit(n + 1, (Gate("H", (n,)),))
    flip = Circuit(n + 1, (Gate("X", (n,)),))
    vec = apply_circuit(anc, vec).amplitudes
    vec = _apply_controlled(build_j, vec, n)
    vec = apply_circuit(flip, vec).amplitudes
    vec = _apply_controlled(build_k, vec, n)
    vec = apply_circuit(flip, vec).amplitudes
    return apply_circuit(anc, vec).amplitudes


def _ancilla_expectation(vec: np.ndarray, half: int, basis: str, system_op=None) -> float:
    """<A_a (x) O> for A in {Z, Y}; ``system_op`` maps system vectors (None = I)."""
    v0, v1 = vec[:half], vec[half:]
    op = (lambda v: v) if system_op is None else system_op
    if basis == "Z":
        return float((np.vdot(v0, op(v0)) - np.vdot(v1, op(v1))).real)
    if basis == "Y":
        # Y = -i|0><1| + i|1><0|
        return float((-1j * np.vdot(v0, op(v1)) + 1j * np.vdot(v1, op(v0))).real)
    raise ValueError(f"basis must be 'Z' or 'Y', got {basis!r}")


def _overlap_from_state(vec: np.ndarray, half: int, basis: str, backend: MeasurementBackend,
                        key: Sequence[int]) -> float:
    value = _ancilla_expectation(vec, half, basis)
    if backend.exact:
        return value
    rng = backend.rng(*key, 0 if basis == "Z" else 1)
    return backend.sample_pm(value, backend.shots, rng)


def _weighted_from_state(vec: np.ndarray, half: int, H: QubitHamiltonian, basis: str,
                         backend: MeasurementBackend, key: Sequence[int]) -> float:
    const = H.constant
    terms = H.non_identity_terms
    anc = _ancilla_expectation(vec, half, basis)
    if backend.exact:
        total = const * anc
        for t in terms:
            total += t.coefficient.real * _ancilla_expectation(
                vec, half, basis, lambda v, w=t.word: apply_word(w, v))
        return total
    rng = backend.rng(*key, 2 if basis == "Z" else 3)
    if not terms:
        return const * backend.sample_pm(anc, backend.shots, rng)
    per_term = max(backend.shots // len(terms), 1)
    total = 0.0
    pooled = 0
    for t in terms:
        op = lambda v, w=t.word: apply_word(w, v)
        sys_exp = float(np.vdot(vec, np.concatenate([op(vec[:half]), op(vec[half:])])).real)
        joint = _ancilla_expectation(vec, half, basis, op)
        # joint outcome probabilities for (ancilla, parity) = (+,+), (+,-), (-,+), (-,-)
        probs = np.array([
            1 + anc + sys_exp + joint,
            1 + anc - sys_exp - joint,
            1 - anc + sys_exp - joint,
            1 - anc - sys_exp + joint,
        ]) / 4
        probs = np.clip(probs, 0.0, None)
        counts = rng.multinomial(per_term, probs / probs.sum())
        total += t.coefficient.real * (counts[0] - counts[1] - counts[2] + counts[3]) / per_term
        pooled += counts[0] + counts[1] - counts[2] - counts[3]
    return total + const * pooled / (per_term * len(terms))


def hadamard_test(build_j: Block, build_k: Block, phi0: StateVector, basis: str = "Z",
                  backend: MeasurementBackend = EXACT, key: Sequence[int] = ()) -> float:
    """Re (basis Z) or Im (basis Y) of <phi0| B_j^dagger B_k |phi0>.

    Shot mode draws ``backend.shots`` Bernoulli outcomes from the exact ancilla
    marginal using the stream for ``key``.
    """
    vec = hadamard_state(build_j, build_k, phi0)
    return _overlap_from_state(vec, 1 << phi0.n_qubits, basis, backend, key)


def hadamard_test_weighted(build_j: Block, build_k: Block, phi0: StateVector, H: QubitHamiltonian,
                           basis: str = "Z", backend: MeasurementBackend = EXACT,
                           key: Sequence[int] = ()) -> float:
    """Re (basis Z) or Im (basis Y) of <phi0| B_j^dagger H B_k |phi0>.

    Shot mode splits the budget evenly over non-identity terms. Each shot of a
    term yields a joint outcome (ancilla, term parity); the identity component
    is estimated from the pooled ancilla outcomes of all shots, never measured
    on its own.
    """
    if H.n_qubits != phi0.n_qubits:
        raise CircuitError("Hamiltonian and reference live on different registers")
    vec = hadamard_state(build_j, build_k, phi0)
    return _weighted_from_state(vec, 1 << phi0.n_qubits, H, basis, backend, key)


def measure_element(build_j: Block, build_k: Block, phi0: StateVector, H: QubitHamiltonian | None = None,
                    backend: MeasurementBackend = EXACT, key: Sequence[int] = ()) -> complex:
    """Both bases of one element from a single circuit simulation.

    Returns <phi_j|phi_k> when ``H`` is None, otherwise <phi_j|H|phi_k>. The
    sampled values are identical to separate ``hadamard_test`` calls with the
    same key.
    """
    vec = hadamard_state(build_j, build_k, phi0)
    half = 1 << phi0.n_qubits
    if H is None:
        return complex(_overlap_from_state(vec, half, "Z", backend, key),
                       _overlap_from_state(vec, half, "Y", backend, key))
    if H.n_qubits != phi0.n_qubits:
        raise CircuitError("Hamiltonian and reference live on different registers")
    return complex(_weighted_from_state(vec, half, H, "Z", backend, key),
                   _weighted_from_state(vec, half, H, "Y", backend, key))

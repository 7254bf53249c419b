"""Variational fast forwarding: exp(-iH dt) ~ W(theta) D(gamma) W(theta)^dagger.

``W`` is a brick of number-conserving two-qubit blocks. Each block has two
parameters: a real Givens rotation ``theta`` on the single-excitation pair
{|01>, |10>} and a phase ``phi`` on |11>; |00> is left alone. ``D`` is a
product of commuting Z-word rotations exp(i gamma_j Z_j) over all Z-words with
at most ``m_max`` factors, the empty word being a global phase. Powers of the
propagator only rescale ``gamma``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .operators import DENSE_QUBIT_LIMIT, QubitHamiltonian, Word
from .simulator import (
    Circuit,
    CircuitError,
    Gate,
    StateVector,
    exact_propagator,
    pauli_gadget,
)


class FitError(RuntimeError):
    pass


def z_words(n_qubits: int, m_max: int) -> list[Word]:
    """Z-words with at most ``m_max`` factors, by weight then lexicographically."""
    words: list[Word] = []
    for m in range(min(m_max, n_qubits) + 1):
        for qubits in combinations(range(n_qubits), m):
            words.append(tuple((q, "Z") for q in qubits))
    return words


def word_key(word: Word) -> str:
    return " ".join(f"Z{q}" for q, _ in word)


def key_word(key: str) -> Word:
    return tuple((int(tok[1:]), "Z") for tok in key.split())


def brick_layout(n_qubits: int, n_layers: int) -> list[list[tuple[int, int]]]:
    """Alternating even/odd nearest-neighbour pairings."""
    layers = []
    for layer in range(n_layers):
        start = layer % 2
        pairs = [(q, q + 1) for q in range(start, n_qubits - 1, 2)]
        if pairs:
            layers.append(pairs)
    return layers


@dataclass
class Block:
    wires: tuple[int, int]
    theta: tuple[float, float] = (0.0, 0.0)


@dataclass
class VffModel:
    n_qubits: int
    dt: float
    m_max: int = 1
    gamma: dict[str, float] = field(default_factory=dict)
    layers: list[list[Block]] = field(default_factory=list)
    fit: dict = field(default_factory=dict)

    def __post_init__(self):
        allowed = {word_key(w) for w in z_words(self.n_qubits, self.m_max)}
        for k in allowed:
            self.gamma.setdefault(k, 0.0)
        for k in self.gamma:
            if k not in allowed:
                raise ValueError(f"gamma index {k!r} not allowed for m_max={self.m_max}")
        for layer in self.layers:
            used: set[int] = set()
            for b in layer:
                a, c = b.wires
                if a == c or not (0 <= a < self.n_qubits and 0 <= c < self.n_qubits):
                    raise CircuitError(f"invalid block wires {b.wires}")
                if used & {a, c}:
                    raise CircuitError(f"wire collision inside layer at {b.wires}")
                used |= {a, c}
        if not all(math.isfinite(v) for v in self.parameters()):
            raise ValueError("non-finite VFF parameter")

    @classmethod
    def unfitted(cls, n_qubits: int, dt: float, m_max: int = 1, n_layers: int = 1) -> "VffModel":
        layers = [[Block(p) for p in layer] for layer in brick_layout(n_qubits, n_layers)]
        return cls(n_qubits, dt, m_max, {}, layers)

    @property
    def words(self) -> list[Word]:
        return z_words(self.n_qubits, self.m_max)

    @property
    def blocks(self) -> list[Block]:
        return [b for layer in self.layers for b in layer]

    def parameters(self) -> list[float]:
        out = [t for b in self.blocks for t in b.theta]
        out += [self.gamma[word_key(w)] for w in self.words]
        return out

    def gamma_vector(self) -> np.ndarray:
        return np.array([self.gamma[word_key(w)] for w in self.words])

    def to_json(self) -> str:
        doc = {
            "n_qubits": self.n_qubits,
            "dt": self.dt,
            "m_max": self.m_max,
            "gamma": {word_key(w): self.gamma[word_key(w)] for w in self.words},
            "layers": [[{"wires": list(b.wires), "theta": list(b.theta)} for b in layer]
                       for layer in self.layers],
            "fit": self.fit,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "VffModel":
        doc = json.loads(text)
        layers = [[Block(tuple(b["wires"]), tuple(float(x) for x in b["theta"])) for b in layer]
                  for layer in doc["layers"]]
        return cls(int(doc["n_qubits"]), float(doc["dt"]), int(doc["m_max"]),
                   {k: float(v) for k, v in doc["gamma"].items()}, layers, doc.get("fit", {}))


# ---------------------------------------------------------------------------
# circuits


def diagonal_circuit(gamma: dict[str, float] | Sequence[float], n_qubits: int, power: int = 1,
                     m_max: int | None = None) -> Circuit:
    """D(gamma)^power = D(power * gamma) as commuting Z-word rotations."""
    if isinstance(gamma, dict):
        items = [(key_word(k), v) for k, v in gamma.items()]
        items.sort(key=lambda kv: (len(kv[0]), kv[0]))
    else:
        words = z_words(n_qubits, n_qubits if m_max is None else m_max)
        items = list(zip(words, gamma))
    gates: list[Gate] = []
    for word, g in items:
        angle = float(g) * power
        if not word:
            gates.append(Gate("GPHASE", (), angle))
        else:
            # exp(i g Z) = exp(-i (-2g)/2 Z)
            gates.extend(pauli_gadget(word, -2 * angle, n_qubits).gates)
    return Circuit(n_qubits, tuple(gates))


def block_circuit(wires: tuple[int, int], theta: Sequence[float], n_qubits: int) -> Circuit:
    a, b = wires
    rot, phi = theta
    xy = ((a, "X"), (b, "Y")) if a < b else ((b, "Y"), (a, "X"))
    yx = ((a, "Y"), (b, "X")) if a < b else ((b, "X"), (a, "Y"))
    zz = tuple(sorted(((a, "Z"), (b, "Z"))))
    gates = list(pauli_gadget(xy, rot, n_qubits).gates)
    gates += pauli_gadget(yx, -rot, n_qubits).gates
    # exp(i phi n_a n_b), n = (1 - Z)/2
    gates += [Gate("RZ", (a,), phi / 2), Gate("RZ", (b,), phi / 2)]
    gates += pauli_gadget(zz, -phi / 2, n_qubits).gates
    gates.append(Gate("GPHASE", (), phi / 4))
    return Circuit(n_qubits, tuple(gates))


def ansatz_circuit(layers: Sequence[Sequence[Block]], n_qubits: int) -> Circuit:
    gates: list[Gate] = []
    for layer in layers:
        used: set[int] = set()
        for blk in layer:
            if used & set(blk.wires):
                raise CircuitError(f"wire collision inside layer at {blk.wires}")
            used |= set(blk.wires)
            gates.extend(block_circuit(blk.wires, blk.theta, n_qubits).gates)
    return Circuit(n_qubits, tuple(gates))


def vff_propagator(model: VffModel, power: int = 1) -> Circuit:
    """Operator W D^power W^dagger (gate order: W^dagger, D, W); W is control frame."""
    W = ansatz_circuit(model.layers, model.n_qubits).as_frame()
    D = diagonal_circuit(model.gamma, model.n_qubits, power)
    return W.inverse() + D + W


def controlled_vff_propagator(model: VffModel, power: int, ancilla: int) -> Circuit:
    if ancilla < model.n_qubits:
        raise CircuitError("ancilla must lie outside the system register")
    return vff_propagator(model, power).widen(ancilla + 1).controlled(ancilla)


class VffPropagator:
    def __init__(self, model: VffModel):
        self.model = model
        self.n_qubits = model.n_qubits

    def power(self, m: int) -> Circuit:
        return vff_propagator(self.model, m)


# ---------------------------------------------------------------------------
# fast dense evaluation for fitting


def block_matrix(theta: Sequence[float]) -> np.ndarray:
    """4x4 block in the local basis index bit_a + 2 * bit_b."""
    rot, phi = theta
    c, s = math.cos(rot), math.sin(rot)
    return np.array([
        [1, 0, 0, 0],
        [0, c, -s, 0],
        [0, s, c, 0],
        [0, 0, 0, np.exp(1j * phi)],
    ], dtype=complex)


def _apply_2q(vec: np.ndarray, n: int, wires: tuple[int, int], mat: np.ndarray) -> np.ndarray:
    a, b = wires
    lo, hi = (a, b) if a < b else (b, a)
    t = vec.reshape(1 << (n - hi - 1), 2, 1 << (hi - lo - 1), 2, 1 << lo)
    m = mat.reshape(2, 2, 2, 2)  # [out_b, out_a, in_b, in_a]
    if a < b:
        out = np.einsum("pqrs,irjsk->ipjqk", m, t)
    else:
        out = np.einsum("pqrs,isjrk->iqjpk", m, t)
    return out.reshape(-1)


def _z_eigen_table(words: Sequence[Word], n_qubits: int) -> np.ndarray:
    idx = np.arange(1 << n_qubits)
    table = np.empty((len(words), idx.size))
    for r, word in enumerate(words):
        mask = sum(1 << q for q, _ in word)
        table[r] = 1 - 2 * (np.bitwise_count(idx & mask).astype(np.int64) & 1)
    return table


class _DenseVff:
    """Vector-level evaluation of W D^k W^dagger for a fixed layout."""

    def __init__(self, n_qubits: int, wires: Sequence[tuple[int, int]], words: Sequence[Word]):
        self.n = n_qubits
        self.wires = list(wires)
        self.words = list(words)
        self.table = _z_eigen_table(self.words, n_qubits)

    def split(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        nb = 2 * len(self.wires)
        return params[:nb].reshape(-1, 2), params[nb:]

    def apply_W(self, vec: np.ndarray, thetas: np.ndarray, dagger: bool = False) -> np.ndarray:
        order = range(len(self.wires) - 1, -1, -1) if dagger else range(len(self.wires))
        for i in order:
            m = block_matrix(thetas[i])
            vec = _apply_2q(vec, self.n, self.wires[i], m.conj().T if dagger else m)
        return vec

    def evolve(self, psi: np.ndarray, params: np.ndarray, powers: Sequence[int]) -> list[np.ndarray]:
        thetas, gamma = self.split(params)
        phases = gamma @ self.table
        base = self.apply_W(psi, thetas, dagger=True)
        return [self.apply_W(np.exp(1j * k * phases) * base, thetas) for k in powers]


def _dense_for(model: VffModel) -> _DenseVff:
    return _DenseVff(model.n_qubits, [b.wires for b in model.blocks], model.words)


def _overlaps(dense: _DenseVff, params: np.ndarray, psi: np.ndarray, targets: Sequence[np.ndarray]) -> np.ndarray:
    states = dense.evolve(psi, params, range(1, len(targets) + 1))
    return np.array([abs(np.vdot(s, t)) for s, t in zip(states, targets)])


@dataclass
class FitReport:
    final_cost: float
    overlaps: list[float]
    cost_trace: list[float] = field(default_factory=list)
    restarts_used: int = 0
    restart_costs: list[float] = field(default_factory=list)


def trajectory(H: QubitHamiltonian, psi: StateVector, dt: float, K: int,
               max_qubits: int = DENSE_QUBIT_LIMIT) -> list[np.ndarray]:
    step = exact_propagator(H, dt, max_qubits)
    out, vec = [], psi.amplitudes
    for _ in range(K):
        vec = step @ vec
        out.append(vec)
    return out


def vff_cost(model: VffModel, H: QubitHamiltonian, psi: StateVector, K: int,
             max_qubits: int = DENSE_QUBIT_LIMIT) -> FitReport:
    """1 - (1/K) sum_k |<psi|(V^k)^dagger exp(-iH k dt)|psi>|^2."""
    targets = trajectory(H, psi, model.dt, K, max_qubits)
    ov = _overlaps(_dense_for(model), np.array(model.parameters()), psi.amplitudes, targets)
    return FitReport(float(1 - np.mean(ov ** 2)), ov.tolist())


def step_overlaps(model: VffModel, H: QubitHamiltonian, psi: StateVector, n_steps: int) -> list[float]:
    """|<psi|(V^k)^dagger exp(-iH k dt)|psi>| for k = 1..n_steps."""
    targets = trajectory(H, psi, model.dt, n_steps)
    return _overlaps(_dense_for(model), np.array(model.parameters()), psi.amplitudes, targets).tolist()


@dataclass(frozen=True)
class FitConfig:
    m_max: int = 1
    n_layers: int = 2
    restarts: int = 8
    max_iterations: int = 500
    gradient_step: float = 1e-6
    init_range: float = 0.1
    seed: int = 0


def _central_gradient(fun, x: np.ndarray, h: float) -> np.ndarray:
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return grad


def align_global_phase(model: VffModel, H: QubitHamiltonian, psi: StateVector) -> None:
    """Set the empty-word gamma so Arg<psi|V|psi> matches Arg<psi|exp(-iH dt)|psi>."""
    target = np.vdot(psi.amplitudes, trajectory(H, psi, model.dt, 1)[0])
    model.gamma[""] = 0.0
    v = _dense_for(model).evolve(psi.amplitudes, np.array(model.parameters()), [1])[0]
    current = np.vdot(psi.amplitudes, v)
    model.gamma[""] = float(np.angle(target) - np.angle(current))


def fit_vff(H: QubitHamiltonian, psi: StateVector, dt: float, K: int = 2,
            config: FitConfig = FitConfig()) -> tuple[VffModel, FitReport]:
    """Multi-start L-BFGS fit of the VFF cost with central finite differences."""
    template = VffModel.unfitted(H.n_qubits, dt, config.m_max, config.n_layers)
    dense = _dense_for(template)
    targets = trajectory(H, psi, dt, K)
    n_theta = 2 * len(template.blocks)
    n_gamma = len(template.words)
    # the empty word only moves a global phase; it is fitted afterwards
    free = np.ones(n_theta + n_gamma, dtype=bool)
    free[n_theta] = False

    def cost(x: np.ndarray) -> float:
        full = np.zeros(free.size)
        full[free] = x
        ov = _overlaps(dense, full, psi.amplitudes, targets)
        return float(1 - np.mean(ov ** 2))

    rng = np.random.default_rng(config.seed)
    best = None
    restart_costs = []
    for _ in range(config.restarts):
        x0 = rng.uniform(-config.init_range, config.init_range, int(free.sum()))
        trace: list[float] = []
        try:
            res = minimize(
                cost, x0, method="L-BFGS-B",
                jac=lambda x: _central_gradient(cost, x, config.gradient_step),
                callback=lambda xk: trace.append(cost(xk)),
                options={"maxiter": config.max_iterations, "ftol": 1e-12, "gtol": 1e-10},
            )
        except (FloatingPointError, ValueError):
            continue
        if not (np.isfinite(res.fun) and np.all(np.isfinite(res.x))):
            continue
        restart_costs.append(float(res.fun))
        if best is None or res.fun < best[0]:
            best = (float(res.fun), res.x, trace)
    if best is None:
        raise FitError("every VFF restart diverged")

    full = np.zeros(free.size)
    full[free] = best[1]
    thetas = full[:n_theta].reshape(-1, 2)
    layers, i = [], 0
    for layer in template.layers:
        row = []
        for blk in layer:
            row.append(Block(blk.wires, (float(thetas[i][0]), float(thetas[i][1]))))
            i += 1
        layers.append(row)
    gamma = {word_key(w): float(g) for w, g in zip(template.words, full[n_theta:])}
    model = VffModel(H.n_qubits, dt, config.m_max, gamma, layers)
    align_global_phase(model, H, psi)
    report = vff_cost(model, H, psi, K)
    report.cost_trace = best[2]
    report.restarts_used = len(restart_costs)
    report.restart_costs = restart_costs
    model.fit = {"cost": report.final_cost, "overlaps": report.overlaps}
    return model, report

"""Overlap, Hamiltonian and time-evolution matrices over a Krylov basis of
time-evolved states, and the two generalized eigenproblems built on them."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .operators import QubitHamiltonian, SpectralDecomposition
from .simulator import (
    EXACT,
    MeasurementBackend,
    Propagator,
    StateVector,
    measure_element,
)

UNITARITY_WINDOW = 0.5

# leading integer of every per-element RNG key
_ROW_KEY, _GRAM_KEY, _H_KEY = 1, 2, 3


class SubspaceError(RuntimeError):
    pass


class NonUnitaryWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    nt: int

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("time step must be positive and finite")
        if self.nt < 0:
            raise ValueError("number of evolved states must be non-negative")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)


@dataclass(frozen=True)
class OverlapRow:
    dt: float
    entries: np.ndarray

    def __len__(self) -> int:
        return len(self.entries)

    def lag(self, m: int) -> complex:
        """s_m for any integer lag, with s_{-m} = conj(s_m)."""
        if m >= 0:
            return complex(self.entries[m])
        return complex(np.conj(self.entries[-m]))


@dataclass(frozen=True)
class SubspaceMatrices:
    S: np.ndarray
    dt: float
    nt: int
    H: np.ndarray | None = None
    U: np.ndarray | None = None
    provenance: str = "exact"
    backend: str = "exact"
    row: OverlapRow | None = None

    def to_json(self) -> str:
        def pairs(a):
            return [[float(z.real), float(z.imag)] for z in np.ravel(a)]

        doc = {"dt": self.dt, "nt": self.nt, "provenance": self.provenance}
        if self.row is not None:
            doc["s_row"] = pairs(self.row.entries)
        else:
            doc["s_row"] = pairs(self.S[0])
        if self.H is not None:
            doc["H"] = pairs(self.H)
        if self.U is not None:
            doc["U"] = pairs(self.U)
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SubspaceMatrices":
        doc = json.loads(text)
        nt = int(doc["nt"])
        dim = nt + 1

        def unpairs(v):
            return np.array([complex(a, b) for a, b in v])

        row = OverlapRow(float(doc["dt"]), unpairs(doc["s_row"]))
        S = assemble_S(row, nt)
        H = unpairs(doc["H"]).reshape(dim, dim) if "H" in doc else None
        U = unpairs(doc["U"]).reshape(dim, dim) if "U" in doc else None
        return cls(S, row.dt, nt, H=H, U=U, provenance=doc.get("provenance", "exact"), row=row)


@dataclass(frozen=True)
class EigenSolution:
    energies: np.ndarray
    coefficients: np.ndarray
    n_independent: int
    threshold: float
    phases: np.ndarray | None = None
    nonunitary: np.ndarray | None = None
    branch_period: float | None = None

    @property
    def ground_energy(self) -> float:
        return float(self.energies[0])


# ---------------------------------------------------------------------------
# measurement of matrix elements


def build_overlap_row(propagator: Propagator, phi0: StateVector, grid: TimeGrid,
                      backend: MeasurementBackend = EXACT) -> OverlapRow:
    """s_m = <phi0|U^m|phi0> for m = 0..nt+1 via single Hadamard tests."""
    entries = np.empty(grid.nt + 2, dtype=complex)
    for m in range(grid.nt + 2):
        block = propagator.power(m) if m else None
        entries[m] = measure_element(None, block, phi0, None, backend, (_ROW_KEY, m))
    return OverlapRow(grid.dt, entries)


def measure_gram(propagator: Propagator, phi0: StateVector, grid: TimeGrid,
                 backend: MeasurementBackend = EXACT) -> np.ndarray:
    """Full overlap matrix with every element measured separately (quadratic cost)."""
    dim = grid.nt + 1
    blocks = [propagator.power(j) if j else None for j in range(dim)]
    S = np.empty((dim, dim), dtype=complex)
    for j in range(dim):
        for k in range(dim):
            S[j, k] = measure_element(blocks[j], blocks[k], phi0, None, backend, (_GRAM_KEY, j, k))
    return S


def _toeplitz(row: OverlapRow, dim: int, shift: int) -> np.ndarray:
    out = np.empty((dim, dim), dtype=complex)
    for j in range(dim):
        for k in range(dim):
            out[j, k] = row.lag(k - j + shift)
    return out


def assemble_S(row: OverlapRow, nt: int) -> np.ndarray:
    """Hermitian Toeplitz overlap S_jk = s_{k-j} from entries 0..nt."""
    if len(row) < nt + 1:
        raise SubspaceError(f"row of length {len(row)} cannot fill a {nt + 1}-dim overlap matrix")
    S = _toeplitz(row, nt + 1, 0)
    np.fill_diagonal(S, row.entries[0].real)
    return S


def build_U_from_row(row: OverlapRow, nt: int) -> np.ndarray:
    """U_jk = s_{k+1-j}; needs the extra entry s_{nt+1}."""
    if len(row) < nt + 2:
        raise SubspaceError(f"row of length {len(row)} lacks s_{nt + 1} needed for U")
    return _toeplitz(row, nt + 1, 1)


def build_H_matrix(propagator: Propagator, phi0: StateVector, grid: TimeGrid, H: QubitHamiltonian,
                   backend: MeasurementBackend = EXACT) -> np.ndarray:
    dim = grid.nt + 1
    blocks = [propagator.power(j) if j else None for j in range(dim)]
    out = np.empty((dim, dim), dtype=complex)
    for j in range(dim):
        for k in range(dim):
            out[j, k] = measure_element(blocks[j], blocks[k], phi0, H, backend, (_H_KEY, j, k))
    return (out + out.conj().T) / 2


def build_matrices(propagator: Propagator, phi0: StateVector, grid: TimeGrid,
                   H: QubitHamiltonian | None = None, backend: MeasurementBackend = EXACT,
                   provenance: str = "exact") -> SubspaceMatrices:
    """Row-based S and U, plus the Hamiltonian matrix when ``H`` is given."""
    row = build_overlap_row(propagator, phi0, grid, backend)
    S = assemble_S(row, grid.nt)
    U = build_U_from_row(row, grid.nt)
    Hm = build_H_matrix(propagator, phi0, grid, H, backend) if H is not None else None
    return SubspaceMatrices(S, grid.dt, grid.nt, H=Hm, U=U, provenance=provenance,
                            backend=backend.mode, row=row)


# ---------------------------------------------------------------------------
# solvers


@dataclass(frozen=True)
class Orthogonalizer:
    basis: np.ndarray
    eigenvalues: np.ndarray
    n_independent: int


def canonical_orthogonalize(S: np.ndarray, threshold: float) -> Orthogonalizer:
    """Keep eigenvectors of S with eigenvalue above ``threshold`` (absolute),
    scaled by 1/sqrt(sigma) so that X^dagger S X = I."""
    S = (S + S.conj().T) / 2
    sigma, vecs = np.linalg.eigh(S)
    keep = sigma > threshold
    basis = vecs[:, keep] / np.sqrt(sigma[keep])
    return Orthogonalizer(basis, sigma, int(keep.sum()))


def solve_hamiltonian(M: SubspaceMatrices, threshold: float) -> EigenSolution:
    if M.H is None:
        raise SubspaceError("Hamiltonian matrix not present")
    orth = canonical_orthogonalize(M.S, threshold)
    if orth.n_independent == 0:
        raise SubspaceError("no overlap eigenvalue above threshold")
    X = orth.basis
    Hp = X.conj().T @ M.H @ X
    energies, y = np.linalg.eigh((Hp + Hp.conj().T) / 2)
    return EigenSolution(energies, X @ y, orth.n_independent, threshold)


def solve_unitary(M: SubspaceMatrices, threshold: float, dt: float | None = None,
                  window: float = UNITARITY_WINDOW) -> EigenSolution:
    """Eigenphases of U in the retained space, mapped to energies on the
    principal branch (-pi/dt, pi/dt]. Other branches differ by multiples of
    ``branch_period`` = 2 pi / dt and are not resolved."""
    if M.U is None:
        raise SubspaceError("time-evolution matrix not present")
    dt = M.dt if dt is None else dt
    orth = canonical_orthogonalize(M.S, threshold)
    if orth.n_independent == 0:
        raise SubspaceError("no overlap eigenvalue above threshold")
    X = orth.basis
    lam, y = np.linalg.eig(X.conj().T @ M.U @ X)
    mod = np.abs(lam)
    inside = (mod >= 1 - window) & (mod <= 1 + window)
    if not inside.all():
        warnings.warn(f"{int((~inside).sum())} eigenvalue(s) of U far from the unit circle",
                      NonUnitaryWarning, stacklevel=2)
    lam = np.where(inside, lam / np.where(mod > 0, mod, 1), lam)
    energies = -np.angle(lam) / dt
    energies = np.where(energies <= -math.pi / dt, energies + 2 * math.pi / dt, energies)
    y = y / np.linalg.norm(y, axis=0)
    order = np.argsort(energies, kind="stable")
    return EigenSolution(energies[order], (X @ y)[:, order], orth.n_independent, threshold,
                         phases=lam[order], nonunitary=~inside[order],
                         branch_period=2 * math.pi / dt)


def phase_cancellation_residual(spectral: SpectralDecomposition, grid: TimeGrid,
                                cutoff: float = 1e-12) -> float:
    """max over support pairs N != M of |mean_j exp(-i t_j (E_N - E_M))|."""
    energies = spectral.energies[spectral.support(cutoff)]
    if energies.size < 2:
        return 0.0
    gaps = energies[:, None] - energies[None, :]
    sums = np.exp(-1j * gaps[None] * grid.times[:, None, None]).mean(axis=0)
    np.fill_diagonal(sums, 0)
    return float(np.abs(sums).max())


# ---------------------------------------------------------------------------
# shot-noise propagation


def bootstrap_ground_std(M: SubspaceMatrices, H: QubitHamiltonian, threshold: float,
                         shots: int, n_samples: int = 200, seed: int = 0,
                         method: str = "hamiltonian") -> float:
    """Standard deviation of the ground energy under resampled shot noise.

    Every measured real number v (a +/-1 mean over ``shots`` outcomes) is
    redrawn from a normal with variance (1 - v^2)/shots; Hamiltonian elements
    use the per-term variance sum of the even shot split.
    """
    rng = np.random.default_rng(seed)
    if M.row is None:
        raise SubspaceError("bootstrap needs the measured overlap row")
    entries = M.row.entries
    nt = M.nt
    row_sd = np.sqrt(np.clip(1 - entries.real ** 2, 0, None) / shots) + 1j * np.sqrt(
        np.clip(1 - entries.imag ** 2, 0, None) / shots)
    terms = H.non_identity_terms
    per_term = max(shots // max(len(terms), 1), 1)
    h_var = sum(t.coefficient.real ** 2 for t in terms) / per_term
    h_sd = math.sqrt(h_var + H.constant ** 2 / (per_term * max(len(terms), 1)))
    samples = []
    for _ in range(n_samples):
        noise = rng.standard_normal(len(entries)) * row_sd.real + 1j * rng.standard_normal(len(entries)) * row_sd.imag
        row = OverlapRow(M.dt, entries + noise)
        S = assemble_S(row, nt)
        U = build_U_from_row(row, nt) if len(row) >= nt + 2 else None
        Hm = None
        if M.H is not None:
            dim = nt + 1
            dh = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) * h_sd
            Hm = M.H + (dh + dh.conj().T) / 2
        trial = replace(M, S=S, U=U, H=Hm, row=row)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NonUnitaryWarning)
                sol = solve_hamiltonian(trial, threshold) if method == "hamiltonian" else solve_unitary(trial, threshold)
        except SubspaceError:
            continue
        samples.append(sol.ground_energy)
    if len(samples) < 2:
        return float("nan")
    return float(np.std(samples, ddof=1))


ENERGY_COLUMNS = ["system", "dt", "nt", "n_independent", "method", "state_index",
                  "energy", "lambda_re", "lambda_im"]


def energies_csv(system: str, M: SubspaceMatrices, solutions: dict[str, EigenSolution]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ENERGY_COLUMNS)
    for method, sol in solutions.items():
        for i, e in enumerate(sol.energies):
            lam = sol.phases[i] if sol.phases is not None else None
            writer.writerow([system, repr(M.dt), M.nt, sol.n_independent, method, i, repr(float(e)),
                             "" if lam is None else repr(float(lam.real)),
                             "" if lam is None else repr(float(lam.imag))])
    return buf.getvalue()

"""Experiment driver: JSON configuration, scans over (dt, N_T, repeat) cells,
CSV emission and the ``vqpe`` command line."""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .operators import QubitHamiltonian, hubbard_model, load_pauli_sum
from .qpe import run_qpe
from .simulator import (
    ExactPropagator,
    MeasurementBackend,
    StateVector,
    TrotterPropagator,
    hartree_fock_state,
    trotter_step,
)
from .subspace import (
    ENERGY_COLUMNS,
    NonUnitaryWarning,
    SubspaceError,
    SubspaceMatrices,
    TimeGrid,
    build_matrices,
    solve_hamiltonian,
    solve_unitary,
)
from .vff import FitConfig, FitError, VffModel, VffPropagator, fit_vff, vff_propagator

METHODS = ("vqpe-exact", "vqpe-trotter", "vff-vqpe")
DIAGONALIZATIONS = ("hamiltonian", "unitary", "both")
RESULT_COLUMNS = ENERGY_COLUMNS + ["repeat", "mean_energy", "std_energy", "status"]

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class VffSettings:
    m_max: int = 1
    layers: int = 2
    K: int = 2
    restarts: int = 8
    max_iterations: int = 500


@dataclass(frozen=True)
class ExperimentConfig:
    system: dict
    reference: dict
    dts: tuple[float, ...]
    nts: tuple[int, ...]
    method: str = "vqpe-exact"
    diagonalization: str = "hamiltonian"
    backend: MeasurementBackend = field(default_factory=MeasurementBackend)
    threshold: float = 1e-5
    vff: VffSettings = field(default_factory=VffSettings)
    repeats: int = 5
    workers: int = 1
    base_dir: Path = Path(".")

    @property
    def seed(self) -> int:
        return self.backend.seed

    def system_name(self) -> str:
        if "hubbard" in self.system:
            h = self.system["hubbard"]
            return f"hubbard-{h['sites']}-{h['t']!r}-{h['U']!r}"
        return Path(self.system["file"]).stem

    def hamiltonian(self) -> QubitHamiltonian:
        if "hubbard" in self.system:
            h = self.system["hubbard"]
            return hubbard_model(int(h["sites"]), float(h["t"]), float(h["U"]))
        return load_pauli_sum(self.base_dir / self.system["file"])

    def reference_state(self, n_qubits: int) -> StateVector:
        if "electrons" in self.reference:
            return hartree_fock_state(n_qubits, int(self.reference["electrons"]))
        return StateVector.basis(n_qubits, int(self.reference["basis_state"]))

    def fit_config(self) -> FitConfig:
        return FitConfig(m_max=self.vff.m_max, n_layers=self.vff.layers, restarts=self.vff.restarts,
                         max_iterations=self.vff.max_iterations, seed=self.seed)


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return doc[key]


def _number(value, path: str, *, positive=False, integer=False, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer and not float(value).is_integer():
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if positive and value <= 0:
        raise ConfigError(path, "must be positive")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be at least {minimum}")
    return int(value) if integer else float(value)


def _list(value, path: str) -> list:
    if not isinstance(value, list):
        value = [value]
    if not value:
        raise ConfigError(path, "must contain at least one entry")
    return value


def _reject_unknown(doc: dict, allowed: set[str], path: str) -> None:
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")


def parse_config(doc: dict, base_dir: Path | str = ".") -> ExperimentConfig:
    """Validate a JSON document; every error names the offending field path."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    _reject_unknown(doc, {"system", "reference", "method", "diagonalization", "grid", "backend",
                          "threshold", "vff", "repeats", "workers"}, "")
    base_dir = Path(base_dir)

    system = _require(doc, "system", "")
    if not isinstance(system, dict) or len(system) != 1 or not ({"hubbard", "file"} & system.keys()):
        raise ConfigError("system", "expected exactly one of 'hubbard' or 'file'")
    if "hubbard" in system:
        h = system["hubbard"]
        if not isinstance(h, dict):
            raise ConfigError("system.hubbard", "expected an object {sites, t, U}")
        _reject_unknown(h, {"sites", "t", "U"}, "system.hubbard")
        system = {"hubbard": {
            "sites": _number(_require(h, "sites", "system.hubbard"), "system.hubbard.sites",
                             integer=True, minimum=1),
            "t": _number(_require(h, "t", "system.hubbard"), "system.hubbard.t"),
            "U": _number(_require(h, "U", "system.hubbard"), "system.hubbard.U"),
        }}
    else:
        if not isinstance(system["file"], str):
            raise ConfigError("system.file", "expected a path string")
        if not (base_dir / system["file"]).is_file():
            raise ConfigError("system.file", f"file {system['file']!r} not found")

    reference = doc.get("reference", None)
    if reference is None:
        raise ConfigError("reference", "missing required field")
    if not isinstance(reference, dict) or len(reference) != 1 or not (
            {"electrons", "basis_state"} & reference.keys()):
        raise ConfigError("reference", "expected exactly one of 'electrons' or 'basis_state'")
    (rkey, rval), = reference.items()
    reference = {rkey: _number(rval, f"reference.{rkey}", integer=True, minimum=0)}

    method = doc.get("method", "vqpe-exact")
    if method not in METHODS:
        raise ConfigError("method", f"expected one of {', '.join(METHODS)}")
    diag = doc.get("diagonalization", "hamiltonian")
    if diag not in DIAGONALIZATIONS:
        raise ConfigError("diagonalization", f"expected one of {', '.join(DIAGONALIZATIONS)}")

    grid = _require(doc, "grid", "")
    if not isinstance(grid, dict):
        raise ConfigError("grid", "expected an object {dt, nt}")
    _reject_unknown(grid, {"dt", "nt"}, "grid")
    dts = tuple(_number(v, f"grid.dt[{i}]", positive=True)
                for i, v in enumerate(_list(_require(grid, "dt", "grid"), "grid.dt")))
    nts = tuple(_number(v, f"grid.nt[{i}]", integer=True, minimum=0)
                for i, v in enumerate(_list(_require(grid, "nt", "grid"), "grid.nt")))

    b = doc.get("backend", {})
    if not isinstance(b, dict):
        raise ConfigError("backend", "expected an object {mode, shots, seed}")
    _reject_unknown(b, {"mode", "shots", "seed"}, "backend")
    mode = b.get("mode", "exact")
    if mode not in ("exact", "shots"):
        raise ConfigError("backend.mode", "expected 'exact' or 'shots'")
    shots = _number(b.get("shots", 10000), "backend.shots", integer=True, minimum=1)
    if mode == "shots" and "seed" not in b:
        raise ConfigError("backend.seed", "shot mode requires an explicit seed (--seed)")
    seed = _number(b.get("seed", 0), "backend.seed", integer=True, minimum=0)

    threshold = _number(doc.get("threshold", 1e-5), "threshold", positive=True)

    v = doc.get("vff", {})
    if not isinstance(v, dict):
        raise ConfigError("vff", "expected an object")
    _reject_unknown(v, {"m_max", "layers", "K", "restarts", "max_iterations"}, "vff")
    vff = VffSettings(
        m_max=_number(v.get("m_max", 1), "vff.m_max", integer=True, minimum=0),
        layers=_number(v.get("layers", 2), "vff.layers", integer=True, minimum=0),
        K=_number(v.get("K", 2), "vff.K", integer=True, minimum=1),
        restarts=_number(v.get("restarts", 8), "vff.restarts", integer=True, minimum=1),
        max_iterations=_number(v.get("max_iterations", 500), "vff.max_iterations", integer=True, minimum=1),
    )
    repeats = _number(doc.get("repeats", 5), "repeats", integer=True, minimum=1)
    workers = _number(doc.get("workers", 1), "workers", integer=True, minimum=1)

    return ExperimentConfig(system, reference, dts, nts, method, diag,
                            MeasurementBackend(mode, shots, seed), threshold, vff, repeats,
                            workers, base_dir)


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("<config>", f"file {str(path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<config>", f"invalid JSON ({exc})") from None
    return parse_config(apply_overrides(doc, overrides or {}), path.parent)


def apply_overrides(doc: dict, overrides: dict) -> dict:
    """Overrides use dotted paths, e.g. {"backend.seed": 3, "grid.dt": [0.1]}."""
    doc = copy.deepcopy(doc)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = doc
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return doc


# ---------------------------------------------------------------------------
# experiment


def cell_seed(seed: int, *key: int) -> int:
    """Seed of one scan cell, independent of scheduling order."""
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def _propagator(config: ExperimentConfig, H: QubitHamiltonian, dt: float, model: VffModel | None):
    if config.method == "vqpe-exact":
        return ExactPropagator(H, dt), "exact"
    if config.method == "vqpe-trotter":
        return TrotterPropagator(H, dt), "trotter"
    return VffPropagator(model), "vff"


def _solve(config: ExperimentConfig, M: SubspaceMatrices) -> dict:
    out = {}
    if config.diagonalization in ("hamiltonian", "both"):
        out["hamiltonian"] = solve_hamiltonian(M, config.threshold)
    if config.diagonalization in ("unitary", "both"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonUnitaryWarning)
            out["unitary"] = solve_unitary(M, config.threshold)
    return out


def run_cell(config: ExperimentConfig, H: QubitHamiltonian, phi0: StateVector, i_dt: int, i_nt: int,
             repeat: int, model: VffModel | None) -> list[dict]:
    """Rows (without aggregate columns) for one (dt, N_T, repeat) cell."""
    dt, nt = config.dts[i_dt], config.nts[i_nt]
    base = {"system": config.system_name(), "dt": repr(dt), "nt": nt, "repeat": repeat}
    try:
        backend = MeasurementBackend(config.backend.mode, config.backend.shots,
                                     cell_seed(config.seed, i_dt, i_nt, repeat))
        prop, provenance = _propagator(config, H, dt, model)
        need_h = config.diagonalization in ("hamiltonian", "both")
        M = build_matrices(prop, phi0, TimeGrid(dt, nt), H if need_h else None, backend, provenance)
        rows = []
        for name, sol in _solve(config, M).items():
            for i, e in enumerate(sol.energies):
                lam = sol.phases[i] if sol.phases is not None else None
                rows.append({**base, "n_independent": sol.n_independent, "method": name,
                             "state_index": i, "energy": float(e),
                             "lambda_re": "" if lam is None else repr(float(lam.real)),
                             "lambda_im": "" if lam is None else repr(float(lam.imag)),
                             "status": "ok"})
        return rows
    except (SubspaceError, FitError, ValueError, np.linalg.LinAlgError) as exc:
        return [_failure(base, exc)]


def _failure(base: dict, exc: Exception) -> dict:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    return {**base, "n_independent": "", "method": "", "state_index": "", "energy": "",
            "lambda_re": "", "lambda_im": "", "status": f"error: {msg}"}


def fit_models(config: ExperimentConfig, H: QubitHamiltonian, phi0: StateVector) -> dict:
    """One VFF fit per time step; the value is a model or the exception raised."""
    out = {}
    for i, dt in enumerate(config.dts):
        try:
            out[i] = fit_vff(H, phi0, dt, config.vff.K, config.fit_config())[0]
        except (FitError, ValueError) as exc:
            out[i] = exc
    return out


def run_experiment(config: ExperimentConfig) -> list[dict]:
    """All result rows, ordered by (dt index, N_T index, repeat, method, state).

    Exact readout is deterministic, so exact mode runs a single repeat.
    """
    H = config.hamiltonian()
    phi0 = config.reference_state(H.n_qubits)
    models = fit_models(config, H, phi0) if config.method == "vff-vqpe" else {}
    repeats = config.repeats if config.backend.mode == "shots" else 1
    jobs = [(i, j, r) for i in range(len(config.dts)) for j in range(len(config.nts))
            for r in range(repeats)]

    def job(key):
        i, j, r = key
        model = models.get(i)
        if isinstance(model, Exception):
            base = {"system": config.system_name(), "dt": repr(config.dts[i]),
                    "nt": config.nts[j], "repeat": r}
            return key, [_failure(base, model)]
        return key, run_cell(config, H, phi0, i, j, r, model)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = dict(pool.map(job, jobs))
    else:
        results = dict(map(job, jobs))
    rows = [row for key in sorted(results) for row in results[key]]
    _aggregate(rows)
    return rows


def _aggregate(rows: list[dict]) -> None:
    """Mean and sample standard deviation of each state's energy across repeats."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        if row["status"] == "ok":
            groups.setdefault((row["dt"], row["nt"], row["method"], row["state_index"]),
                              []).append(row["energy"])
    for row in rows:
        if row["status"] != "ok":
            row["mean_energy"] = row["std_energy"] = ""
            continue
        vals = groups[(row["dt"], row["nt"], row["method"], row["state_index"])]
        row["mean_energy"] = repr(float(np.mean(vals)))
        row["std_energy"] = repr(float(np.std(vals, ddof=1))) if len(vals) > 1 else ""
        row["energy"] = repr(row["energy"])


def rows_to_csv(rows: list[dict], columns: list[str] = RESULT_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# gate counts

GATE_COLUMNS = ["circuit", "power", "gates", "cnots"]


def report_gate_counts(config: ExperimentConfig, powers=(1, 2, 50)) -> list[dict]:
    """Gate and CNOT totals for Trotter circuits of ``power`` steps and for the
    VFF propagator raised to ``power``. Counts are structural, so the VFF
    circuit is built from an unfitted model with the configured layout."""
    H = config.hamiltonian()
    dt = config.dts[0]
    step = trotter_step(H, dt)
    model = VffModel.unfitted(H.n_qubits, dt, config.vff.m_max, config.vff.layers)
    rows = []
    for p in powers:
        c = step.power(p)
        rows.append({"circuit": "trotter", "power": p, "gates": c.gate_count(), "cnots": c.cnot_count()})
    for p in powers:
        c = vff_propagator(model, p)
        rows.append({"circuit": "vff", "power": p, "gates": c.gate_count(), "cnots": c.cnot_count()})
    return rows


# ---------------------------------------------------------------------------
# command line


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="JSON experiment configuration")
    p.add_argument("--seed", type=int, help="master seed (required in shot mode)")
    p.add_argument("--mode", choices=("exact", "shots"), help="measurement backend")
    p.add_argument("--shots", type=int, help="shots per Hadamard test")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--diagonalization", choices=DIAGONALIZATIONS)
    p.add_argument("--dt", type=float, nargs="+", help="time steps to scan")
    p.add_argument("--nt", type=int, nargs="+", help="numbers of evolved states to scan")
    p.add_argument("--threshold", type=float, help="overlap eigenvalue cutoff")
    p.add_argument("--repeats", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("-o", "--output", help="write to this file instead of stdout")


def _overrides(args: argparse.Namespace) -> dict:
    return {
        "backend.seed": args.seed, "backend.mode": args.mode, "backend.shots": args.shots,
        "method": args.method, "diagonalization": args.diagonalization,
        "grid.dt": args.dt, "grid.nt": args.nt, "threshold": args.threshold,
        "repeats": args.repeats, "workers": args.workers,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqpe", description="Variational quantum phase estimation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="scan dt and N_T and write energies as CSV")
    _add_overrides(p)

    p = sub.add_parser("fit-vff", help="fit a VFF model for the first time step and write it as JSON")
    _add_overrides(p)

    p = sub.add_parser("gate-counts", help="gate and CNOT counts of Trotter and VFF circuits")
    _add_overrides(p)
    p.add_argument("--powers", type=int, nargs="+", default=[1, 2, 50])

    p = sub.add_parser("qpe", help="QPE ancilla distribution as CSV")
    _add_overrides(p)
    p.add_argument("--ancillas", type=int, default=4)
    p.add_argument("--time", type=float, default=None, help="evolution time t (default: first dt)")

    p = sub.add_parser("dump-matrices", help="subspace matrices for the first dt and N_T as JSON")
    _add_overrides(p)
    return parser


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        H = config.hamiltonian()
        phi0 = config.reference_state(H.n_qubits)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "run":
        rows = run_experiment(config)
        _emit(rows_to_csv(rows), args.output)
        failed = sum(r["status"] != "ok" for r in rows)
        if failed:
            print(f"{failed} cell(s) failed", file=sys.stderr)
            return EXIT_PARTIAL
        return EXIT_OK

    if args.command == "fit-vff":
        try:
            model, report = fit_vff(H, phi0, config.dts[0], config.vff.K, config.fit_config())
        except FitError as exc:
            print(f"fit failed: {exc}", file=sys.stderr)
            return EXIT_PARTIAL
        print(f"cost {report.final_cost:.3e} after {report.restarts_used} restart(s)", file=sys.stderr)
        _emit(model.to_json() + "\n", args.output)
        return EXIT_OK

    if args.command == "gate-counts":
        _emit(rows_to_csv(report_gate_counts(config, args.powers), GATE_COLUMNS), args.output)
        return EXIT_OK

    if args.command == "qpe":
        t = args.time if args.time is not None else config.dts[0]
        try:
            result = run_qpe(H, phi0, args.ancillas, t, config.backend)
        except ValueError as exc:
            print(f"qpe failed: {exc}", file=sys.stderr)
            return EXIT_PARTIAL
        _emit(result.to_csv(), args.output)
        return EXIT_OK

    # dump-matrices
    models = fit_models(config, H, phi0) if config.method == "vff-vqpe" else {}
    model = models.get(0)
    if isinstance(model, Exception):
        print(f"fit failed: {model}", file=sys.stderr)
        return EXIT_PARTIAL
    prop, provenance = _propagator(config, H, config.dts[0], model)
    M = build_matrices(prop, phi0, TimeGrid(config.dts[0], config.nts[0]), H, config.backend, provenance)
    _emit(M.to_json() + "\n", args.output)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

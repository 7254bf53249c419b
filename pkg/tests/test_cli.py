import csv
import io
import json

import pytest

from conftest import DIMER_GROUND
from vqpe.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_PARTIAL,
    RESULT_COLUMNS,
    ConfigError,
    apply_overrides,
    load_config,
    main,
    parse_config,
    report_gate_counts,
    rows_to_csv,
    run_experiment,
)

DIMER = {
    "system": {"hubbard": {"sites": 2, "t": 1.0, "U": 0.5}},
    "reference": {"electrons": 2},
    "method": "vqpe-exact",
    "diagonalization": "hamiltonian",
    "grid": {"dt": [0.1], "nt": [4]},
    "backend": {"mode": "exact"},
    "threshold": 1e-5,
}


def _cfg(**changes):
    return parse_config(apply_overrides(DIMER, changes))


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.mark.parametrize("change, path", [
    ({"grid.dt": []}, "grid.dt"),
    ({"grid.dt": [0.1, -0.2]}, "grid.dt[1]"),
    ({"grid.nt": [1.5]}, "grid.nt[0]"),
    ({"threshold": 0}, "threshold"),
    ({"repeats": 0}, "repeats"),
    ({"method": "qpe"}, "method"),
    ({"diagonalization": "svd"}, "diagonalization"),
    ({"backend.mode": "shots"}, "backend.seed"),
    ({"backend.shots": "many"}, "backend.shots"),
    ({"system.hubbard.sites": 0}, "system.hubbard.sites"),
    ({"system.hubbard.colour": 1}, "system.hubbard.colour"),
    ({"vff.layers": -1}, "vff.layers"),
    ({"extra": 1}, "extra"),
])
def test_validation_errors_name_field(change, path):
    with pytest.raises(ConfigError) as err:
        _cfg(**change)
    assert err.value.path == path
    assert str(err.value).startswith(path + ":")


def test_missing_fields_and_files(tmp_path):
    doc = {k: v for k, v in DIMER.items() if k != "grid"}
    with pytest.raises(ConfigError, match="^grid:"):
        parse_config(doc)
    with pytest.raises(ConfigError, match="^system.file:"):
        parse_config({**DIMER, "system": {"file": "nope.txt"}}, tmp_path)
    with pytest.raises(ConfigError, match="^reference:"):
        parse_config({**DIMER, "reference": {"electrons": 2, "basis_state": 3}})
    with pytest.raises(ConfigError, match="^<config>:"):
        load_config(tmp_path / "absent.json")


def test_overrides_take_precedence(tmp_path):
    path = _write(tmp_path, DIMER)
    cfg = load_config(path, {"grid.nt": [1, 2], "backend.mode": "shots", "backend.seed": 3})
    assert cfg.nts == (1, 2) and cfg.backend.mode == "shots" and cfg.seed == 3


def test_exact_dimer_ground_energy():
    rows = run_experiment(_cfg())
    ground = [r for r in rows if r["state_index"] == 0]
    assert len(ground) == 1
    assert float(ground[0]["energy"]) == pytest.approx(DIMER_GROUND, abs=1e-8)
    assert ground[0]["status"] == "ok"


def test_single_state_gives_reference_energy():
    rows = run_experiment(_cfg(**{"grid.nt": [0]}))
    assert len(rows) == 1 and float(rows[0]["energy"]) == pytest.approx(0.5, abs=1e-12)


def test_file_system_and_basis_reference(tmp_path, h2_path):
    doc = {**DIMER, "system": {"file": str(h2_path)}, "reference": {"basis_state": 3}}
    rows = run_experiment(parse_config(doc))
    assert rows[0]["system"] == "h2_sto3g_1p5"
    assert float(rows[0]["energy"]) == pytest.approx(-0.9981493534, abs=1e-8)


def test_shot_scan_is_byte_identical_and_has_error_bars(h2_path):
    doc = {**DIMER, "system": {"file": str(h2_path)}, "threshold": 0.1,
           "grid": {"dt": [1.0], "nt": [1, 4]},
           "backend": {"mode": "shots", "shots": 10000, "seed": 5}, "repeats": 3}
    cfg = parse_config(doc)
    first = rows_to_csv(run_experiment(cfg))
    assert first == rows_to_csv(run_experiment(cfg))
    threaded = parse_config({**doc, "workers": 3})
    assert rows_to_csv(run_experiment(threaded)) == first
    rows = _rows(first)
    assert list(rows[0].keys()) == RESULT_COLUMNS
    assert sorted({r["repeat"] for r in rows}) == ["0", "1", "2"]
    assert all(r["std_energy"] != "" for r in rows if r["state_index"] == "0")
    other = rows_to_csv(run_experiment(parse_config(apply_overrides(doc, {"backend.seed": 6}))))
    assert other != first


def test_failed_cells_are_recorded_and_run_continues():
    rows = run_experiment(_cfg(**{"threshold": 50.0, "grid.nt": [0, 2]}))
    assert len(rows) == 2
    assert all(r["status"].startswith("error:") for r in rows)
    assert [r["nt"] for r in rows] == [0, 2]


def test_vff_method_rows():
    cfg = _cfg(**{"method": "vff-vqpe", "grid.nt": [2], "vff.restarts": 1, "vff.max_iterations": 30})
    rows = run_experiment(cfg)
    assert rows and all(r["status"] == "ok" for r in rows)


def test_trotter_method_and_both_paths():
    rows = run_experiment(_cfg(**{"method": "vqpe-trotter", "diagonalization": "both"}))
    methods = {r["method"] for r in rows}
    assert methods == {"hamiltonian", "unitary"}
    assert all(r["lambda_re"] != "" for r in rows if r["method"] == "unitary")


def test_gate_count_report():
    rows = report_gate_counts(_cfg(), powers=(1, 3, 50))
    trotter = {r["power"]: r for r in rows if r["circuit"] == "trotter"}
    vff = {r["power"]: r for r in rows if r["circuit"] == "vff"}
    assert trotter[50]["gates"] == 50 * trotter[1]["gates"]
    assert trotter[3]["cnots"] == 3 * trotter[1]["cnots"]
    assert vff[1] == {**vff[50], "power": 1}


def test_main_run_and_exit_codes(tmp_path, capsys):
    path = _write(tmp_path, DIMER)
    assert main(["run", path]) == EXIT_OK
    rows = _rows(capsys.readouterr().out)
    assert float(rows[0]["energy"]) == pytest.approx(DIMER_GROUND, abs=1e-8)
    assert main(["run", path, "--threshold", "50"]) == EXIT_PARTIAL
    capsys.readouterr()
    assert main(["run", path, "--mode", "shots"]) == EXIT_CONFIG
    assert "backend.seed" in capsys.readouterr().err
    assert main(["run", path, "--dt", "-1"]) == EXIT_CONFIG


def test_main_other_verbs(tmp_path, capsys):
    path = _write(tmp_path, DIMER)
    out = tmp_path / "out.csv"
    assert main(["gate-counts", path, "-o", str(out), "--powers", "1", "100"]) == EXIT_OK
    assert out.read_text().splitlines()[0] == "circuit,power,gates,cnots"
    assert main(["qpe", path, "--ancillas", "3", "--time", "0.5"]) == EXIT_OK
    assert len(capsys.readouterr().out.splitlines()) == 9
    assert main(["dump-matrices", path, "--nt", "2"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["nt"] == 2 and len(doc["s_row"]) == 4 and len(doc["H"]) == 9
    model_path = tmp_path / "model.json"
    short = _write(tmp_path, {**DIMER, "vff": {"restarts": 1, "max_iterations": 20}}, "short.json")
    assert main(["fit-vff", short, "-o", str(model_path)]) == EXIT_OK
    assert json.loads(model_path.read_text())["n_qubits"] == 4

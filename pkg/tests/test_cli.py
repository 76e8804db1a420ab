import json

import numpy as np
import pytest

from anisoscat.cli import EXIT_BUDGET, EXIT_OK, EXIT_VALIDATION, main
from anisoscat.farfield import MultistaticMatrix
from anisoscat.scenario import AnisotropicTensor, DefectSpec, Disk, Scenario

ISO = AnisotropicTensor.isotropic

SIM = ["--N", "6", "--h", "0.2", "--h-exterior", "0.5", "--defect-h", "0.06", "--pml", "1.5"]


@pytest.fixture(scope="module")
def scenario_file(tmp_path_factory):
    d = DefectSpec((0.2, -0.1), Disk(0.15), ISO(1.0), 2.0)
    sc = Scenario(Disk(1.0), ISO(2.0), 1.5, (d,), wavenumber=2.0, n_directions=6, seed=5)
    p = tmp_path_factory.mktemp("sc") / "scenario.json"
    p.write_text(sc.to_json())
    return p


@pytest.fixture(scope="module")
def simulated(scenario_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = main(["simulate", str(scenario_file), "--out-dir", str(out), "--noise", "0.01"] + SIM)
    return code, out


def test_simulate_writes_matrix_and_manifest(simulated, scenario_file):
    code, out = simulated
    assert code == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "simulate"
    assert man["scenario_hash"] == Scenario.load(scenario_file).hash
    assert set(man["outputs"]) >= {"F_000.csv"}
    F = MultistaticMatrix.from_csv(out / "F_000.csv")
    assert F.N == 6 and F.noise_level == 0.01
    assert np.abs(F.entries).max() > 0


def test_replay_is_bit_identical(simulated, tmp_path):
    _, out = simulated
    assert main(["replay", str(out / "manifest.json"), "--out-dir", str(tmp_path)]) == EXIT_OK
    a = (out / "F_000.csv").read_bytes()
    b = (tmp_path / "replay" / "F_000.csv").read_bytes()
    assert a == b


def test_music_rejects_direction_mismatch(simulated, tmp_path):
    _, out = simulated
    d = DefectSpec((0.2, -0.1), Disk(0.15), ISO(1.0), 2.0)
    other = Scenario(Disk(1.0), ISO(2.0), 1.5, (d,), wavenumber=2.0, n_directions=8)
    p = tmp_path / "other.json"
    p.write_text(other.to_json())
    code = main(["music", str(out / "F_000.csv"), str(p), "--out-dir", str(tmp_path / "m")])
    assert code == EXIT_VALIDATION


def test_music_runs_on_simulated_data(simulated, scenario_file, tmp_path):
    _, out = simulated
    code = main(["music", str(out / "F_000.csv"), str(scenario_file), "--out-dir", str(tmp_path),
                 "--resolution", "21", "--h", "0.2", "--h-exterior", "0.5", "--defect-h", "0.06",
                 "--pml", "1.5", "--expected", "1"])
    assert code == EXIT_OK
    rows = (tmp_path / "indicator.csv").read_text().splitlines()
    assert rows[0] == "x,y,I" and len(rows) == 21 * 21 + 1


def test_invalid_scenario_exits_with_validation_code(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"schema": "nope"}')
    assert main(["simulate", str(p), "--out-dir", str(tmp_path / "o")]) == EXIT_VALIDATION
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["params"]["exit_code"] == EXIT_VALIDATION


def test_unknown_study_and_parameter(tmp_path):
    assert main(["study", "no-such-study", "--out-dir", str(tmp_path)]) == EXIT_VALIDATION
    assert main(["study", "reciprocity", "--set", "colour=1",
                 "--out-dir", str(tmp_path)]) == EXIT_VALIDATION


def test_budget_overrun_exits_with_budget_code(tmp_path):
    code = main(["study", "eoc-table1", "--set", "eps=[0.25, 0.125]", "--budget", "1e-3",
                 "--out-dir", str(tmp_path)])
    assert code == EXIT_BUDGET
    summary = (tmp_path / "summary.csv").read_text()
    assert "incomplete" in summary


def test_bessel_mode_lists_disk_eigenvalues(tmp_path):
    sc = Scenario(Disk(1.0), ISO(10.0), 1.0)
    p = tmp_path / "disk.json"
    p.write_text(sc.to_json())
    assert main(["tev", str(p), "--mode", "bessel", "--window", "5", "9",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    csvs = [f for f in tmp_path.iterdir() if f.suffix == ".csv"]
    text = csvs[0].read_text()
    assert "5.2923377" in text and "8.7854837" in text

import json

import pandas as pd
import pytest

from app.main import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, main
from app.services.result_writer import INTERVAL_FILE, LOSS_FILE, MANIFEST_FILE, SUMMARY_FILE, VIOLATION_FILE
from tests.conftest import case_document


def _write_case(tmp_path, name, **kwargs):
    path = tmp_path / name
    path.write_text(json.dumps(case_document(**kwargs)))
    return str(path)


@pytest.fixture
def plain_case(tmp_path):
    return _write_case(tmp_path, "plain.json", loads={2: 100.0})


@pytest.fixture
def tcl_case(tmp_path):
    return _write_case(
        tmp_path, "tcl.json", loads={2: 100.0},
        generators=[{"bus": 2, "p_min": 0.0, "p_max": 150.0}],
        pv=[{"bus": 2, "forecast_p": 20.0, "sigma_frac": 0.2}],
        tcl=[{"bus": 2, "avg_load_kw": 20.0, "n_states": 4}],
    )


def _run(*argv):
    return main(list(argv) + ["--workers", "1", "--log-level", "WARNING"])


def test_solve_without_ensembles_converges(plain_case, tmp_path):
    out = tmp_path / "run"
    assert _run("solve", "--case", plain_case, "--out", str(out)) == EXIT_OK
    summary = json.loads((out / SUMMARY_FILE).read_text())
    assert summary["status"] == "converged"
    manifest = json.loads((out / MANIFEST_FILE).read_text())
    assert manifest["case_path"] == plain_case
    assert manifest["network_hash"] == summary["network_hash"]


def test_solve_hitting_iteration_cap_exits_two(tcl_case, tmp_path):
    out = tmp_path / "run"
    code = _run("solve", "--case", tcl_case, "--out", str(out), "--zeta", "1e-12", "--max-iter", "1")
    assert code == EXIT_NOT_CONVERGED
    assert (out / INTERVAL_FILE).exists()


def test_validate_after_solve(tcl_case, tmp_path):
    out = tmp_path / "run"
    _run("solve", "--case", tcl_case, "--out", str(out), "--delta", "1e-4", "--max-iter", "3")
    code = _run("validate", "--case", tcl_case, "--out", str(out), "--samples", "300", "--seed", "4")
    assert code == EXIT_OK
    violations = pd.read_csv(out / VIOLATION_FILE)
    assert list(violations.columns) == ["eta", "t", "constraint_family", "count", "rate"]
    assert (violations["eta"] == 0.05).all()
    assert len(pd.read_csv(out / LOSS_FILE)) == 1


def test_validate_against_other_case_fails(tcl_case, plain_case, tmp_path):
    out = tmp_path / "run"
    _run("solve", "--case", plain_case, "--out", str(out))
    assert _run("validate", "--case", tcl_case, "--out", str(out)) == EXIT_ERROR


def test_missing_case_file(tmp_path):
    assert _run("solve", "--case", str(tmp_path / "nope.json"), "--out", str(tmp_path)) == EXIT_ERROR


def test_sweep_without_values(tcl_case, tmp_path):
    code = _run("sweep", "--case", tcl_case, "--out", str(tmp_path), "--parameter", "sigma_frac", "--values")
    assert code == EXIT_ERROR


def test_sweep_writes_tables(tcl_case, tmp_path):
    out = tmp_path / "sweep"
    code = _run("sweep", "--case", tcl_case, "--out", str(out), "--parameter", "gamma_mode",
                "--values", "uniform", "nonuniform", "--no-validate", "--max-iter", "2", "--delta", "1e-4")
    assert code == EXIT_OK
    summary = pd.read_csv(out / "sweep_summary.csv")
    assert list(summary["value"]) == ["uniform", "nonuniform"]
    assert len(pd.read_csv(out / "sweep_intervals.csv")) == 2


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    [],
    ["solve", "--delta", "fast"],
    ["sweep"],
])
def test_usage_errors_exit_one(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == EXIT_ERROR


def test_invalid_option_value_exits_one(plain_case, tmp_path):
    assert _run("solve", "--case", plain_case, "--out", str(tmp_path), "--eta-v", "0.6") == EXIT_ERROR


def test_opf_deterministic(tcl_case, tmp_path):
    out = tmp_path / "opf"
    assert _run("opf", "--case", tcl_case, "--out", str(out), "--deterministic") == EXIT_OK
    intervals = pd.read_csv(out / INTERVAL_FILE)
    assert intervals.loc[0, "expected_loss"] == pytest.approx(intervals.loc[0, "deterministic_loss"])


def test_opf_interval_out_of_range(tcl_case, tmp_path):
    assert _run("opf", "--case", tcl_case, "--out", str(tmp_path), "--t", "5") == EXIT_ERROR


def test_mdp_writes_policies(tcl_case, tmp_path):
    out = tmp_path / "mdp"
    assert _run("mdp", "--case", tcl_case, "--out", str(out), "--price-p", "0.05") == EXIT_OK
    injections = pd.read_csv(out / "mdp_injections.csv")
    assert list(injections.columns) == ["bus", "t", "p", "q"]
    assert list(injections["bus"]) == [2]


def test_mdp_unknown_bus(tcl_case, tmp_path):
    assert _run("mdp", "--case", tcl_case, "--out", str(tmp_path), "--bus", "9") == EXIT_ERROR


@pytest.mark.parametrize("mode", ["paper", "aggregated"])
def test_aggregated_objective_mode_names(tcl_case, tmp_path, mode):
    out = tmp_path / "run"
    code = _run("solve", "--case", tcl_case, "--out", str(out), "--objective-mode", mode, "--max-iter", "2")
    assert code in (EXIT_OK, EXIT_NOT_CONVERGED)
    assert json.loads((out / MANIFEST_FILE).read_text())["objective_mode"] == "paper"


def test_plain_dual_ascent_flag(tcl_case, tmp_path):
    out = tmp_path / "run"
    code = _run("solve", "--case", tcl_case, "--out", str(out), "--no-proximal", "--delta", "1e-4",
                "--max-iter", "2")
    assert code in (EXIT_OK, EXIT_NOT_CONVERGED)
    assert json.loads((out / MANIFEST_FILE).read_text())["proximal"] is False

import json

import numpy as np
import pytest
from pydantic import ValidationError

from app.config import Settings
from app.models.schemas import GammaMode, SweepParameter
from app.services.pipeline import (
    keep_ensembles, manifest_echo, prepare_network, resolve_manifest, run_solve, std2_config, tariff,
)
from app.services.sweep import SUMMARY_COLUMNS, SweepRunner, parse_values
from tests.conftest import case_document


@pytest.fixture
def case_file(tmp_path):
    doc = case_document(
        n_buses=3, horizon=2, loads={2: 30.0, 3: 40.0},
        generators=[{"bus": 3, "p_min": 0.0, "p_max": 80.0, "q_min": -40.0, "q_max": 40.0}],
        pv=[{"bus": 3, "forecast_p": [5.0, 8.0], "sigma_frac": 0.2}],
        tcl=[{"bus": 2, "avg_load_kw": 10.0, "n_states": 4}, {"bus": 3, "avg_load_kw": 6.0, "n_states": 4}],
        lambda_tariff=[8.0, 12.0],
    )
    path = tmp_path / "case.json"
    path.write_text(json.dumps(doc))
    return str(path)


def _manifest(case_file, tmp_path, **overrides):
    base = {"case_path": case_file, "output_dir": str(tmp_path / "out"), "workers": 1,
            "delta": 1e-4, "max_iter": 3, "n_samples": 200}
    base.update(overrides)
    return resolve_manifest(base, Settings())


def test_overrides_win_over_settings(tmp_path):
    source = Settings(DELTA=0.5, SEED=7, N_SAMPLES=50)
    manifest = resolve_manifest({"case_path": "x.json", "seed": 3, "eta_v": None}, source)
    assert manifest.delta == 0.5
    assert manifest.seed == 3
    assert manifest.n_samples == 50
    assert manifest.eta_v == 0.05
    assert manifest.case_path == "x.json"


def test_invalid_override_is_rejected():
    with pytest.raises(ValidationError):
        resolve_manifest({"eta_v": 0.7}, Settings())
    with pytest.raises(ValidationError):
        resolve_manifest({"delta": 0.0}, Settings())


def test_case_tariff_is_kept_unless_overridden(case_file, tmp_path):
    network = prepare_network(_manifest(case_file, tmp_path))
    assert network.tariff(1, 99.0) == 12.0
    manifest = _manifest(case_file, tmp_path, lambda_tariff=5.0)
    network = prepare_network(manifest)
    assert network.tariff(1, tariff(manifest)) == 5.0
    assert std2_config(manifest).lambda_tariff == 5.0


def test_dropped_ensembles_become_average_load(small_feeder):
    reduced = keep_ensembles(small_feeder, 1)
    assert reduced.tcl_buses == [3]
    b = small_feeder.bus_index[4]
    np.testing.assert_allclose(reduced.load_p[:, b], small_feeder.load_p[:, b] + 15.0)
    expected_q = 15.0 * np.tan(np.arccos(0.95))
    np.testing.assert_allclose(reduced.load_q[:, b], small_feeder.load_q[:, b] + expected_q)
    assert keep_ensembles(small_feeder, 5) is small_feeder


def test_manifest_echo_carries_hash(case_file, tmp_path):
    manifest = _manifest(case_file, tmp_path, gamma_mode="nonuniform")
    network = prepare_network(manifest)
    echo = manifest_echo(manifest, network)
    assert echo["network_hash"] == network.source_hash
    assert echo["gamma_mode"] == "nonuniform"
    assert echo["resolved_tariff"] == 10.0
    json.dumps(echo)


def test_run_solve_with_baseline(case_file, tmp_path):
    run = run_solve(_manifest(case_file, tmp_path))
    assert run.solution.iterations == 3
    assert len(run.baseline) == 2
    assert len(run.solution.policies) == 2


def test_parse_values():
    assert parse_values(SweepParameter.SIGMA_FRAC, ["0.1", "0.2"]) == [0.1, 0.2]
    assert parse_values(SweepParameter.N_STATES, ["4", "8"]) == [4, 8]
    assert parse_values(SweepParameter.GAMMA_MODE, ["uniform"]) == [GammaMode.UNIFORM]
    with pytest.raises(ValueError):
        parse_values(SweepParameter.ETA_V, [])
    with pytest.raises(ValueError):
        parse_values(SweepParameter.GAMMA_MODE, ["sometimes"])


def test_sweep_records_failures_and_continues(case_file, tmp_path):
    runner = SweepRunner(_manifest(case_file, tmp_path), validate=True)
    results = runner.run(SweepParameter.ETA_V, [0.05, 0.7])
    assert results[0].ok and not results[1].ok
    assert results[1].error
    summary = runner.summary_frame()
    assert list(summary.columns) == SUMMARY_COLUMNS
    assert list(summary["value"]) == ["0.05", "0.7"]
    intervals = runner.interval_frame()
    assert len(intervals) == 2
    assert intervals["max_voltage_violation_rate"].notna().all()
    stats = runner.generate_statistics()
    assert stats["total_values"] == 2
    assert stats["failed_values"] == 1


def test_sweep_without_validation_leaves_realized_columns_empty(case_file, tmp_path):
    runner = SweepRunner(_manifest(case_file, tmp_path), validate=False)
    runner.run(SweepParameter.N_ENSEMBLES, [0, 2])
    intervals = runner.interval_frame()
    assert len(intervals) == 4
    assert intervals["mean_loss"].isna().all()
    summary = runner.summary_frame()
    assert summary.loc[0, "status"] == "converged"
    assert np.isnan(summary.loc[0, "baseline_total_expected_loss"])


def test_empty_sweep_is_rejected(case_file, tmp_path):
    with pytest.raises(ValueError):
        SweepRunner(_manifest(case_file, tmp_path)).run(SweepParameter.SIGMA_FRAC, [])

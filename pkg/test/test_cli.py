"""
Сквозные тесты командной строки: коды выхода, файлы результатов, воспроизводимость
"""

import json

import numpy as np
import pandas as pd
import pytest

from core.estimators import EstimatorConfig, estimate_all_areas
from core.oracle import fit_metrics
from core.run_manager import PANEL_COLUMNS, RESULT_COLUMNS, WEIGHT_COLUMNS
from main import main

VARIABLES = [
    {"name": "sex", "levels": ["m", "f"], "role": "P"},
    {"name": "pid", "levels": ["d", "r"], "role": "S"},
]


@pytest.fixture
def workspace(tmp_path, monkeypatch, two_area_data):
    """Рабочая папка с опросом, населением и конфигурацией"""
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("SAWT_LOG_DIR", str(tmp_path / "logs"))
    survey, table = two_area_data
    survey.to_frame().to_csv(tmp_path / "survey.csv", index=False)
    table.to_frame().to_csv(tmp_path / "population.csv", index=False)
    config = {
        "paths": {"survey": "survey.csv", "population": "population.csv"},
        "schema": {"variables": VARIABLES},
    }
    (tmp_path / "config.json").write_text(json.dumps(config), encoding="utf-8")
    return tmp_path


def read(path):
    return pd.read_csv(path, float_precision="round_trip", keep_default_na=False)


def run(*args):
    return main(list(args))


def test_estimate_writes_results(workspace, capsys):
    assert run("estimate", "--config", "config.json", "--out", "out") == 0
    out = workspace / "out"
    results = read(out / "results.csv")
    assert list(results.columns) == RESULT_COLUMNS
    assert list(results["area"]) == ["A", "A", "B", "B"]
    assert list(results["method"]) == ["direct", "synthetic"] * 2
    summary = json.loads(capsys.readouterr().out)
    assert summary["command"] == "estimate"
    assert "results.csv" in summary["outputs"]
    assert (out / "overlap.json").exists() and (out / "summary.json").exists()
    assert (workspace / "logs" / "sawt.log").exists()
    assert not list(out.glob("*.log"))


def test_estimate_matches_library(workspace, two_area_data):
    assert run("estimate", "--config", "config.json", "--out", "out", "--threads", "2") == 0
    survey, table = two_area_data
    expected = estimate_all_areas(survey, table, EstimatorConfig())
    results = read(workspace / "out" / "results.csv")
    for row, r in zip(results.itertuples(), expected.results):
        assert (row.area, row.method) == (r.area, r.method.value)
        assert row.estimate == r.estimate
        assert row.se == r.se


def test_rerun_is_byte_identical(workspace):
    args = ("estimate", "--config", "config.json", "--emit-weights", "--svg", "--bootstrap", "10", "--seed", "4")
    assert run(*args, "--out", "one") == 0
    assert run(*args, "--out", "two") == 0
    for name in ("results.csv", "weights.csv", "overlap.json", "summary.json", "direct_vs_synthetic.svg"):
        assert (workspace / "one" / name).read_bytes() == (workspace / "two" / name).read_bytes(), name
    weights = read(workspace / "one" / "weights.csv")
    assert list(weights.columns) == WEIGHT_COLUMNS
    for _, group in weights.groupby("area"):
        assert group["weight"].sum() == pytest.approx(1.0, abs=1e-12)


def test_config_error_exit_code(workspace, capsys):
    (workspace / "bad.json").write_text(json.dumps({"estimator": {"lamda": 1}}), encoding="utf-8")
    assert run("estimate", "--config", "bad.json", "--out", "out") == 2
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "ConfigError"
    assert json.loads((workspace / "out" / "error.json").read_text(encoding="utf-8"))["exit_code"] == 2


def test_data_error_then_recovery(workspace):
    good = (workspace / "survey.csv").read_text(encoding="utf-8")
    (workspace / "survey.csv").write_text(good.replace(",m,", ",x,", 1), encoding="utf-8")
    assert run("estimate", "--config", "config.json", "--out", "out") == 3
    error = json.loads((workspace / "out" / "error.json").read_text(encoding="utf-8"))
    assert error["error"] == "SchemaError"
    assert error["details"]["column"] == "sex"
    (workspace / "survey.csv").write_text(good, encoding="utf-8")
    assert run("estimate", "--config", "config.json", "--out", "out") == 0
    assert not (workspace / "out" / "error.json").exists()


def test_missing_survey_path(workspace):
    (workspace / "noinput.json").write_text(json.dumps({"schema": {"variables": VARIABLES}}), encoding="utf-8")
    assert run("estimate", "--config", "noinput.json", "--out", "out") == 2


def test_diagnose(workspace):
    assert run("diagnose", "--config", "config.json", "--out", "diag", "--epsilon", "0.1") == 0
    panel = read(workspace / "diag" / "ignorability.csv")
    assert list(panel.columns) == PANEL_COLUMNS
    assert list(panel["area"]) == ["A", "B"]
    summary = json.loads((workspace / "diag" / "summary.json").read_text(encoding="utf-8"))
    assert summary["epsilon"] == 0.1
    assert summary["note"]


def test_diagnose_single_area_fails(workspace):
    frame = pd.read_csv(workspace / "survey.csv", dtype=str)
    frame["area"] = "A"
    frame.to_csv(workspace / "survey.csv", index=False)
    assert run("diagnose", "--config", "config.json", "--out", "diag") == 3


def simulate_config(workspace, **simulation):
    payload = {"simulation": {"n": [3000], "areas": 4, **simulation}}
    path = workspace / "sim.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return "sim.json"


def test_simulate_identification(workspace):
    config = simulate_config(workspace)
    assert run("simulate", "--config", config, "--out", "s0", "--seed", "0") == 0
    ident = read(workspace / "s0" / "identification.csv")
    assert np.max(np.abs(ident["residual"])) <= 1e-10
    assert np.max(np.abs(ident["decomposition_residual"])) <= 1e-10
    metrics = read(workspace / "s0" / "metrics.csv")
    assert {"synthetic", "direct", "unweighted"} <= set(metrics["set"])


def test_simulate_seed_changes_sample_not_truth(workspace):
    config = simulate_config(workspace)
    assert run("simulate", "--config", config, "--out", "s0", "--seed", "0") == 0
    assert run("simulate", "--config", config, "--out", "s1", "--seed", "1") == 0
    assert (workspace / "s0" / "truth.csv").read_bytes() == (workspace / "s1" / "truth.csv").read_bytes()
    assert (workspace / "s0" / "estimates.csv").read_bytes() != (workspace / "s1" / "estimates.csv").read_bytes()


def test_simulate_monte_carlo(workspace):
    config = simulate_config(workspace, n=[500, 1000], replicates=2, areas=2)
    assert run("simulate", "--config", config, "--out", "mc") == 0
    summary = read(workspace / "mc" / "monte_carlo_summary.csv")
    assert list(summary["n"]) == [500, 1000]
    assert len(read(workspace / "mc" / "monte_carlo.csv")) == 4


def test_validate_metrics(workspace):
    assert run("simulate", "--config", simulate_config(workspace), "--out", "sim") == 0
    assert run("validate", "--out", "val", "--estimates", "sim/estimates.csv", "--truth", "sim/truth.csv") == 0
    truth = read(workspace / "sim" / "truth.csv")
    estimates = read(workspace / "sim" / "estimates.csv")
    synthetic = estimates[estimates["method"] == "synthetic"]
    expected = fit_metrics(synthetic["estimate"].to_numpy(), truth["truth"].to_numpy(), strict=False)
    metrics = read(workspace / "val" / "metrics.csv").set_index("set")
    assert metrics.loc["synthetic", "rmse"] == pytest.approx(expected.rmse, abs=1e-15)
    assert metrics.loc["synthetic", "mean_error"] == pytest.approx(expected.mean_error, abs=1e-15)


def test_validate_truth_as_estimates(workspace):
    truth = pd.DataFrame({"area": ["1", "2", "3"], "truth": [0.2, 0.5, 0.4]})
    truth.to_csv(workspace / "truth.csv", index=False)
    truth.rename(columns={"truth": "estimate"}).to_csv(workspace / "exact.csv", index=False)
    noisy = truth.rename(columns={"truth": "estimate"}).assign(estimate=[0.25, 0.45, 0.5])
    noisy.to_csv(workspace / "a.csv", index=False)
    noisy.to_csv(workspace / "b.csv", index=False)

    assert run("validate", "--out", "v1", "--estimates", "exact.csv", "--truth", "truth.csv") == 0
    metrics = read(workspace / "v1" / "metrics.csv")
    assert metrics.loc[0, "rmse"] == 0.0 and metrics.loc[0, "mae"] == 0.0

    assert run("validate", "--out", "v2", "--estimates", "a.csv", "b.csv", "--truth", "truth.csv") == 0
    corr = read(workspace / "v2" / "error_correlation.csv").set_index("set")
    assert corr.loc["a", "b"] == pytest.approx(1.0)


def test_validate_reports_missing_areas(workspace, capsys):
    pd.DataFrame({"area": ["1", "2", "3", "4"], "truth": [0.2, 0.5, 0.4, 0.6]}).to_csv(workspace / "truth.csv", index=False)
    pd.DataFrame({"area": ["1", "2", "4"], "estimate": [0.3, 0.5, 0.6]}).to_csv(workspace / "short.csv", index=False)
    assert run("validate", "--out", "v", "--estimates", "short.csv", "--truth", "truth.csv") == 0
    metrics = read(workspace / "v" / "metrics.csv").set_index("set")
    assert metrics.loc["short", "n_areas"] == 3
    assert metrics.loc["short", "rmse"] == pytest.approx(np.sqrt(0.01 / 3), abs=1e-15)
    aligned = read(workspace / "v" / "aligned.csv")
    assert list(aligned["area"]) == ["1", "2", "3", "4"]
    assert aligned.loc[2, "short"] == ""
    summary = json.loads(capsys.readouterr().out)
    assert summary["missing_areas"] == {"short": ["3"]}


def test_validate_unknown_area_fails(workspace):
    pd.DataFrame({"area": ["1", "2", "3"], "truth": [0.2, 0.5, 0.4]}).to_csv(workspace / "truth.csv", index=False)
    pd.DataFrame({"area": ["1", "2", "9"], "estimate": [0.2, 0.5, 0.1]}).to_csv(workspace / "extra.csv", index=False)
    assert run("validate", "--out", "v", "--estimates", "extra.csv", "--truth", "truth.csv") == 3
